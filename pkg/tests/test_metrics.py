"""
Tests for request metrics, SLA compliance and CDFs.
"""

import pytest

from hatsim.kernel import EventLog, LoggedEvent
from hatsim.metrics import (
    IncompleteLogError,
    RequestRecord,
    cdf,
    compute_request_metrics,
    decode_compliant,
    make_record,
    prefill_compliant,
    sla_compliance,
)
from hatsim.schema import SlaConfig

S = 1_000_000_000


def record(ttft_ns, tbt_ns=(), prompt_len=128):
    return RequestRecord(request_id=0, device_id=0, prompt_len=prompt_len, chunk_size=prompt_len, arrival_ns=0,
                         ttft_ns=ttft_ns, tbt_ns=tuple(tbt_ns), output_len=len(tbt_ns) + 1,
                         prefill_ok=True, decode_ok=True)


class TestMakeRecord:
    """Tests for deriving TTFT and TBT from emission times."""

    def test_ttft_and_tbt(self):
        r = make_record(3, 1, 64, 16, 0, [1 * S, S + S // 2, 2 * S + S // 10], SlaConfig())
        assert r.ttft == pytest.approx(1.0)
        assert r.tbt_ns == (S // 2, 6 * S // 10)
        assert r.output_len == 3
        assert r.last_emission_ns == 2 * S + S // 10

    def test_single_token(self):
        r = make_record(0, 0, 64, 64, 100, [500], SlaConfig())
        assert r.tbt_ns == ()
        assert r.mean_tbt_ns is None

    def test_out_of_order_emissions(self):
        with pytest.raises(IncompleteLogError):
            make_record(0, 0, 64, 64, 0, [10, 30, 20], SlaConfig())

    def test_emission_before_arrival(self):
        with pytest.raises(IncompleteLogError):
            make_record(0, 0, 64, 64, 100, [100], SlaConfig())

    def test_no_emissions(self):
        with pytest.raises(IncompleteLogError):
            make_record(0, 0, 64, 64, 0, [], SlaConfig())

    def test_record_rejects_mismatched_tbt(self):
        with pytest.raises(ValueError):
            RequestRecord(request_id=0, device_id=0, prompt_len=8, chunk_size=8, arrival_ns=0, ttft_ns=5,
                          tbt_ns=(1,), output_len=3, prefill_ok=True, decode_ok=True)


class TestSla:
    """Tests for prefill and decode SLA checks."""

    def test_prefill_scales_with_prompt(self):
        assert prefill_compliant(int(0.55 * S), 256, 0.3)
        assert not prefill_compliant(int(0.65 * S), 256, 0.3)

    def test_prefill_boundary_inclusive(self):
        assert prefill_compliant(S // 5, 128, 0.2)

    def test_decode_boundary_inclusive(self):
        assert decode_compliant([S // 20] * 10, 0.5)
        assert decode_compliant([S // 20] * 25, 0.5)

    def test_decode_window_violation(self):
        gaps = [S // 100] * 30
        gaps[12] = S // 2
        assert not decode_compliant(gaps, 0.5)

    def test_short_output_scaled_total(self):
        assert decode_compliant([S // 20] * 3, 0.5)
        assert not decode_compliant([S // 20, S // 20, S // 10], 0.5)

    def test_rates(self):
        records = [record(S // 10), record(S), record(S // 10, [S // 2] * 10)]
        rates = sla_compliance(records, 0.2, 0.5)
        assert rates.prefill_rate == pytest.approx(2 / 3)
        assert rates.decode_rate == pytest.approx(2 / 3)
        assert not rates.vacuous

    def test_empty_set_is_vacuous(self):
        assert sla_compliance([], 0.2, 0.5) == (1.0, 1.0, True)

    def test_rejects_nonpositive_sla(self):
        with pytest.raises(ValueError):
            sla_compliance([], 0.0, 0.5)


class TestCdf:

    def test_steps(self):
        assert cdf([3, 1, 2]) == [(1.0, pytest.approx(1 / 3)), (2.0, pytest.approx(2 / 3)), (3.0, 1.0)]

    def test_single_value(self):
        assert cdf([7.5]) == [(7.5, 1.0)]

    def test_duplicates_collapse(self):
        assert cdf([2, 2, 1, 2]) == [(1.0, 0.25), (2.0, 1.0)]

    def test_empty(self):
        with pytest.raises(ValueError):
            cdf([])


class TestComputeRequestMetrics:
    """Tests for the event-log oracle."""

    @staticmethod
    def log_of(*events):
        return EventLog([LoggedEvent(t, seq, kind, rid, detail) for seq, (t, kind, rid, detail) in enumerate(events)])

    def test_rebuilds_record(self):
        log = self.log_of(
            (0, 'arrival', 0, {'device': 2, 'prompt_len': 256, 'chunk_size': 64, 'chunks': 4}),
            (S, 'local-compute-done', 0, {'stage': 'head', 'emitted': 1}),
            (S + 5, 'local-compute-done', 0, {'stage': 'shallow-decode'}),
            (2 * S, 'local-compute-done', 0, {'stage': 'head', 'emitted': 3}),
            (2 * S + 2, 'request-complete', 0, {'output_len': 4}),
        )
        [r] = compute_request_metrics(log, SlaConfig())
        assert r.device_id == 2
        assert r.chunk_size == 64
        assert r.ttft_ns == S
        assert r.tbt_ns == (S, 1, 1)

    def test_missing_completion(self):
        log = self.log_of(
            (0, 'arrival', 0, {'device': 0, 'prompt_len': 8, 'chunk_size': 8}),
            (10, 'local-compute-done', 0, {'stage': 'head', 'emitted': 1}),
        )
        with pytest.raises(IncompleteLogError):
            compute_request_metrics(log)

    def test_out_of_order_log(self):
        log = EventLog([
            LoggedEvent(5, 0, 'arrival', 0, {'device': 0, 'prompt_len': 8, 'chunk_size': 8}),
            LoggedEvent(3, 1, 'request-complete', 0, {}),
        ])
        with pytest.raises(IncompleteLogError):
            compute_request_metrics(log)

    def test_empty_log(self):
        assert compute_request_metrics(EventLog()) == []
