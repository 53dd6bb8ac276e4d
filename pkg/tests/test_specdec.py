"""
Tests for drafting, verification, speculative decoding and parallel drafting.
"""

import numpy as np
import pytest

from hatsim.monitor import CloudStateEstimate, DelayPredictor, DeviceState
from hatsim.ngram import build_ngram_model, greedy_decode, synthetic_corpus
from hatsim.schema import SpecDecodeConfig
from hatsim.specdec import (
    Continuation,
    ParallelDraftPlan,
    draft,
    generate_candidates,
    plan_parallel_draft,
    resolve_candidates,
    speculative_decode,
    verify,
)


class RankedModel:
    """Draft-model stand-in: the next-token ranking depends only on the last token."""

    def __init__(self, table, eos_id=None):
        self.table = table
        self.eos_id = eos_id

    def top_k(self, context, k):
        return self.table[context[-1]][:k]

    def greedy_next(self, context):
        return self.table[context[-1]][0]


@pytest.fixture(scope="module")
def corpora():
    """A few seeded corpora with their vocabularies."""
    return [synthetic_corpus(int(v), 3000, seed=s) for s, v in enumerate([8, 12, 20, 32])]


class TestDraft:
    """Tests for threshold-stopped drafting."""

    def test_stops_after_first_low_probability_token(self):
        model = RankedModel({0: [(1, 0.9)], 1: [(2, 0.8)], 2: [(3, 0.4)], 3: [(4, 0.95)]})
        seq = draft(model, [0], SpecDecodeConfig(eta=0.6, max_draft=8))
        assert seq.tokens == (1, 2, 3)
        assert seq.probs == (0.9, 0.8, 0.4)
        assert seq.context_len == 1

    def test_zero_threshold_reaches_max_draft(self):
        model = RankedModel({t: [((t + 1) % 5, 0.2)] for t in range(5)})
        seq = draft(model, [0], SpecDecodeConfig(eta=0.0, max_draft=6))
        assert len(seq) == 6

    def test_full_threshold_single_token(self):
        model = RankedModel({0: [(1, 0.7)], 1: [(2, 0.7)]})
        assert len(draft(model, [0], SpecDecodeConfig(eta=1.0))) == 1

    def test_eos_ends_draft(self):
        model = RankedModel({0: [(1, 0.9)], 1: [(9, 0.9)], 9: [(0, 0.9)]}, eos_id=9)
        assert draft(model, [0], SpecDecodeConfig(eta=0.5)).tokens == (1, 9)

    def test_threshold_invariant_randomized(self, corpora):
        rng = np.random.default_rng(2)
        for vocab, corpus in corpora:
            model = build_ngram_model(corpus, 1, vocab_size=vocab.size, eos_id=vocab.eos_id)
            for _ in range(25):
                cfg = SpecDecodeConfig(eta=float(rng.choice([0.0, 0.3, 0.6, 0.9, 1.0])),
                                       max_draft=int(rng.integers(1, 9)))
                start = int(rng.integers(0, len(corpus) - 5))
                seq = draft(model, corpus[start:start + 5], cfg)
                assert 1 <= len(seq) <= cfg.max_draft
                assert all(p >= cfg.eta for p in seq.probs[:-1])
                assert seq.probs[-1] < cfg.eta or len(seq) == cfg.max_draft or seq.tokens[-1] == vocab.eos_id


class TestVerify:
    """Tests for exact greedy verification."""

    @pytest.fixture
    def chain(self):
        # a=0 -> b=1 -> c=2 -> d=3; x=4 never follows anything
        return build_ngram_model([0, 1, 2, 3], order=1, vocab_size=5)

    def test_partial_accept(self, chain):
        result = verify(chain, [0], [1, 4])
        assert result.accepted_count == 1
        assert result.correction == 2
        assert result.accept_length == 2

    def test_full_accept_gives_bonus(self, chain):
        result = verify(chain, [0], [1, 2])
        assert result.accepted_count == 2
        assert result.correction == 3

    def test_immediate_mismatch(self, chain):
        result = verify(chain, [0], [4])
        assert (result.accepted_count, result.correction) == (0, 1)

    def test_empty_draft(self, chain):
        with pytest.raises(ValueError):
            verify(chain, [0], [])


class TestSpeculativeDecode:
    """Tests for the draft-verify loop."""

    def test_matches_greedy_decoding_randomized(self, corpora):
        rng = np.random.default_rng(1000)
        cases = 0
        for i, (vocab, corpus) in enumerate(corpora):
            models = {order: build_ngram_model(corpus, order, vocab_size=vocab.size, eos_id=vocab.eos_id)
                      for order in range(4)}
            while cases < 250 * (i + 1):
                target_order, draft_order = rng.integers(0, 4, size=2)
                cfg = SpecDecodeConfig(eta=float(rng.choice([0.0, 0.3, 0.6, 0.9, 1.0])),
                                       max_draft=int(rng.integers(1, 9)), k=2)
                start = int(rng.integers(0, len(corpus) - 10))
                prompt = corpus[start:start + int(rng.integers(1, 10))]
                max_new = int(rng.integers(0, 40))
                target = models[int(target_order)]
                out, stats = speculative_decode(target, models[int(draft_order)], prompt, cfg, max_new)
                assert out == greedy_decode(target, prompt, max_new)
                assert sum(s.emitted for s in stats) == len(out)
                assert all(s.emitted <= s.accepted_count + 1 <= cfg.max_draft + 1 for s in stats)
                cases += 1
        assert cases == 1000

    def test_identical_models_emit_max_draft_plus_one(self, corpora):
        vocab, corpus = corpora[1]
        model = build_ngram_model(corpus, 2, vocab_size=vocab.size, eos_id=vocab.eos_id)
        cfg = SpecDecodeConfig(eta=0.0, max_draft=4)
        out, stats = speculative_decode(model, model, corpus[:6], cfg, max_new=60)
        assert out == greedy_decode(model, corpus[:6], 60)
        assert all(s.emitted == 5 for s in stats[:-1])
        assert all(s.accepted_count == 4 for s in stats[:-1])

    def test_zero_budget(self, corpora):
        vocab, corpus = corpora[0]
        model = build_ngram_model(corpus, 1, vocab_size=vocab.size, eos_id=vocab.eos_id)
        assert speculative_decode(model, model, corpus[:3], SpecDecodeConfig(), 0) == ([], [])


class TestParallelDrafting:
    """Tests for the lambda planner and candidate continuations."""

    def test_lambda_hand_example(self):
        device = DeviceState(gamma=0.005, beta_up=8e6, beta_down=12e6)
        predictor = DelayPredictor(default_delay=0.010)
        assert plan_parallel_draft(device, predictor, CloudStateEstimate(), draft_len=4, A=8192) == 3

    def test_lambda_slow_device(self):
        device = DeviceState(gamma=10.0, beta_up=8e6, beta_down=12e6)
        assert plan_parallel_draft(device, DelayPredictor(), CloudStateEstimate(), 4, 8192) == 0

    def test_lambda_monotone_in_gamma(self):
        predictor = DelayPredictor(default_delay=0.02)
        values = [plan_parallel_draft(DeviceState(g, 8e6, 12e6), predictor, CloudStateEstimate(), 3, 8192)
                  for g in (0.001, 0.002, 0.004, 0.008, 0.016)]
        assert values == sorted(values, reverse=True)

    def test_lambda_rejects_empty_draft(self):
        with pytest.raises(ValueError):
            plan_parallel_draft(DeviceState(0.005, 8e6, 12e6), DelayPredictor(), CloudStateEstimate(), 0, 8192)

    def test_candidates_ranked_from_last_step(self):
        model = RankedModel({
            0: [(1, 0.9)],
            1: [(2, 0.3), (3, 0.2)],
            2: [(4, 0.9)], 3: [(5, 0.9)], 4: [(6, 0.9)], 5: [(7, 0.9)], 6: [(6, 0.9)], 7: [(7, 0.9)],
            8: [(2, 0.5), (3, 0.3), (9, 0.2)],
        })
        context = [8]
        last = draft(model, context, SpecDecodeConfig(eta=0.6, max_draft=8))
        assert last.tokens == (2,)
        plan = generate_candidates(model, context, last, SpecDecodeConfig(eta=0.6, k=2), lambda_steps=2)
        assert set(plan.candidates) == {2, 3}
        assert plan.candidates[2].tokens == (4, 6)
        assert plan.candidates[3].tokens == (5, 7)
        assert plan.anchor_len == 1

    def test_zero_lambda_gives_empty_continuations(self, corpora):
        vocab, corpus = corpora[2]
        model = build_ngram_model(corpus, 1, vocab_size=vocab.size, eos_id=vocab.eos_id)
        cfg = SpecDecodeConfig(k=3)
        last = draft(model, corpus[:4], cfg)
        plan = generate_candidates(model, corpus[:4], last, cfg, lambda_steps=0)
        assert len(plan.candidates) == 3
        assert all(c.tokens == () for c in plan.candidates.values())

    def test_top_one_is_greedy(self, corpora):
        vocab, corpus = corpora[2]
        model = build_ngram_model(corpus, 1, vocab_size=vocab.size, eos_id=vocab.eos_id)
        cfg = SpecDecodeConfig(k=1)
        context = corpus[10:14]
        last = draft(model, context, cfg)
        plan = generate_candidates(model, context, last, cfg, lambda_steps=2)
        base = list(context) + list(last.tokens[:-1])
        assert list(plan.candidates) == [model.greedy_next(base)[0]]

    def test_resolved_continuation_matches_fresh_draft(self, corpora):
        cfg = SpecDecodeConfig(eta=0.6, max_draft=6, k=3)
        for vocab, corpus in corpora:
            model = build_ngram_model(corpus, 1, vocab_size=vocab.size, eos_id=vocab.eos_id)
            for start in range(0, 400, 37):
                context = corpus[start:start + 5]
                last = draft(model, context, cfg)
                for lam in (0, 1, 3, 10):
                    plan = generate_candidates(model, context, last, cfg, lam)
                    for token, cont in plan.candidates.items():
                        if token == vocab.eos_id:
                            continue
                        new_context = list(context) + list(last.tokens[:-1]) + [token]
                        fresh = draft(model, new_context, cfg)
                        for steps in range(lam + 1):
                            resumed = draft(model, new_context, cfg, plan.truncated(steps).candidates[token])
                            assert resumed.tokens == fresh.tokens

    def test_resolve_hit_miss_and_empty(self):
        cont = Continuation((5, 6), (0.9, 0.8))
        plan = ParallelDraftPlan(lambda_steps=2, candidates={2: cont, 3: Continuation()}, anchor_len=7)
        assert resolve_candidates(plan, 2) == cont
        assert resolve_candidates(plan, 9) is None
        assert resolve_candidates(ParallelDraftPlan(lambda_steps=0), 2) is None
        assert resolve_candidates(plan, 2, context_len=7) == cont
        assert resolve_candidates(plan, 2, context_len=8) is None

    def test_truncated_plan(self):
        plan = ParallelDraftPlan(2, {1: Continuation((4, 5), (0.9, 0.3), complete=True)}, 3)
        short = plan.truncated(1)
        assert short.candidates[1].tokens == (4,)
        assert not short.candidates[1].complete
        assert plan.truncated(5).candidates[1].complete
