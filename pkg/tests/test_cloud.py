"""
Tests for the cloud engine: delay model, batch formation and pipeline.
"""

import pytest

from hatsim.cloud import (
    DECODE_ONE,
    PREFILL_CHUNK,
    VERIFY,
    Batch,
    BatchPolicy,
    PipelineState,
    WorkItem,
    WorkQueue,
    advance_pipeline,
    chunked_prefill_cost,
    form_batch,
    stage_durations,
    true_delay,
)
from hatsim.network import to_ns
from hatsim.schema import CloudProfile


def batch_of(n_tokens):
    return Batch((WorkItem(0, DECODE_ONE if n_tokens == 1 else VERIFY, n_tokens, 0, 0),))


class TestTrueDelay:
    """Tests for the calibrated delay model."""

    def test_flat_region(self):
        profile = CloudProfile()
        assert true_delay(profile, 1) == pytest.approx(0.025)
        assert true_delay(profile, 32) == pytest.approx(0.025)

    def test_long_prompt(self):
        assert true_delay(CloudProfile(), 2048) == pytest.approx(0.28, abs=0.001)

    def test_zero_slope(self):
        profile = CloudProfile(slope=0.0)
        assert {true_delay(profile, n) for n in (1, 64, 65, 5000)} == {0.025}

    def test_non_decreasing_and_continuous(self):
        profile = CloudProfile()
        values = [true_delay(profile, n) for n in range(1, 300)]
        assert values == sorted(values)
        assert true_delay(profile, profile.n_sat) == true_delay(profile, profile.n_sat - 1)

    def test_rejects_empty_batch(self):
        with pytest.raises(ValueError):
            true_delay(CloudProfile(), 0)


class TestFormBatch:
    """Tests for continuous batch formation."""

    def test_mixed_batch(self):
        queue = WorkQueue()
        queue.push(WorkItem(1, VERIFY, 3, 10, 0))
        queue.push(WorkItem(2, VERIFY, 4, 11, 1))
        queue.push(WorkItem(3, PREFILL_CHUNK, 32, 12, 2, chunk_index=0))
        batch = form_batch(queue)
        assert batch.total_tokens == 39
        assert len(queue) == 0

    def test_empty_queue(self):
        assert form_batch(WorkQueue()) is None

    def test_one_chunk_per_request(self):
        queue = WorkQueue()
        queue.push(WorkItem(1, PREFILL_CHUNK, 32, 0, 0, chunk_index=0))
        queue.push(WorkItem(1, PREFILL_CHUNK, 32, 0, 1, chunk_index=1))
        queue.push(WorkItem(2, PREFILL_CHUNK, 16, 0, 2, chunk_index=0))
        batch = form_batch(queue)
        assert [(i.request_id, i.chunk_index) for i in batch.items] == [(1, 0), (2, 0)]
        assert [(i.request_id, i.chunk_index) for i in queue.items] == [(1, 1)]

    def test_fcfs_order(self):
        queue = WorkQueue()
        queue.push(WorkItem(1, VERIFY, 2, 50, 0))
        queue.push(WorkItem(2, VERIFY, 2, 20, 1))
        batch = form_batch(queue)
        assert [i.request_id for i in batch.items] == [2, 1]

    def test_token_cap(self):
        queue = WorkQueue()
        queue.push(WorkItem(1, PREFILL_CHUNK, 100, 0, 0, chunk_index=0))
        queue.push(WorkItem(2, VERIFY, 4, 1, 1))
        queue.push(WorkItem(3, VERIFY, 60, 2, 2))
        batch = form_batch(queue, BatchPolicy(max_batch_tokens=110))
        assert [i.request_id for i in batch.items] == [1, 2]
        assert [i.request_id for i in queue.items] == [3]

    def test_oversized_first_item_admitted(self):
        queue = WorkQueue()
        queue.push(WorkItem(1, PREFILL_CHUNK, 500, 0, 0, chunk_index=0))
        assert form_batch(queue, BatchPolicy(max_batch_tokens=64)).total_tokens == 500

    def test_item_needs_tokens(self):
        with pytest.raises(ValueError):
            WorkItem(1, VERIFY, 0, 0, 0)


class TestPipeline:
    """Tests for P-stage pipeline progression."""

    def test_stage_durations_sum(self):
        assert stage_durations(10, 4) == [2, 2, 3, 3]
        assert sum(stage_durations(20_000_001, 8)) == 20_000_001

    def test_idle_four_stages(self):
        profile = CloudProfile(P=4, d0=0.020)
        done, state = advance_pipeline(PipelineState.idle(4), batch_of(1), profile, 0)
        assert done == to_ns(0.020)
        assert state.stage_free_at[0] == to_ns(0.005)

    def test_second_batch_queues_behind_first(self):
        profile = CloudProfile(P=4, d0=0.020)
        _, state = advance_pipeline(PipelineState.idle(4), batch_of(1), profile, 0)
        done, _ = advance_pipeline(state, batch_of(1), profile, 0)
        assert done == to_ns(0.025)

    def test_single_stage(self):
        profile = CloudProfile(P=1)
        done, _ = advance_pipeline(PipelineState.idle(1), batch_of(100), profile, 7)
        assert done == 7 + to_ns(true_delay(profile, 100))

    @pytest.mark.parametrize("P", [1, 2, 4, 8])
    def test_idle_residence_equals_delay(self, P):
        profile = CloudProfile(P=P)
        for n in (1, 64, 333, 2048):
            start = 1_000
            done, _ = advance_pipeline(PipelineState.idle(P), batch_of(n), profile, start)
            assert done - start == to_ns(true_delay(profile, n))

    @pytest.mark.parametrize("P", [1, 2, 4, 8])
    def test_back_to_back_throughput(self, P):
        profile = CloudProfile(P=P, d0=0.024)
        state = PipelineState.idle(P)
        completions = []
        for _ in range(6):
            done, state = advance_pipeline(state, batch_of(8), profile, 0)
            completions.append(done)
        gaps = {b - a for a, b in zip(completions, completions[1:])}
        assert gaps == {to_ns(0.024) // P}

    def test_negative_time(self):
        with pytest.raises(ValueError):
            advance_pipeline(PipelineState.idle(2), batch_of(1), CloudProfile(P=2), -1)

    @pytest.mark.parametrize("P", [1, 2, 4])
    def test_arriving_chunk_waits_at_most_one_batch_delay(self, P):
        profile = CloudProfile(P=P)
        queue = WorkQueue()
        state = PipelineState.idle(P)
        now = 0
        seq = 0
        for in_flight_tokens in (1, 48, 512, 2048):
            queue.push(WorkItem(1, VERIFY, in_flight_tokens, now, seq))
            seq += 1
            in_flight = form_batch(queue)
            _, state = advance_pipeline(state, in_flight, profile, now)
            bound = to_ns(true_delay(profile, in_flight.total_tokens))
            for offset in (0, 1, bound // 3, bound // 2, bound - 1):
                arrival = now + offset
                queue.push(WorkItem(2, PREFILL_CHUNK, 64, arrival, seq, 0, True))
                seq += 1
                dispatch = max(arrival, state.stage_free_at[0])
                assert dispatch - arrival <= bound
                chunk = form_batch(queue)
                assert [item.request_id for item in chunk.items] == [2]
            now = state.stage_free_at[0]


class TestChunkedPrefillCost:
    """Tests for the cloud-only chunked prefill experiment."""

    def test_chunking_saves_compute_but_delays_prefill(self):
        profile = CloudProfile(P=1)
        chunked = chunked_prefill_cost(profile, 2048, 32, n_decode=9, steps=64)
        whole = chunked_prefill_cost(profile, 2048, None, n_decode=9, steps=64)
        assert chunked.total_compute_s < whole.total_compute_s
        assert chunked.total_compute_s == pytest.approx(1.6)
        assert whole.total_compute_s == pytest.approx(1.856, abs=1e-3)
        assert 4.0 <= chunked.prefill_done_s / whole.prefill_done_s <= 9.0

    def test_batch_composition(self):
        result = chunked_prefill_cost(CloudProfile(P=1), 100, 40, n_decode=2, steps=4)
        assert result.batch_tokens == [42, 42, 22, 3]
