"""
Speculative decoding engine.

Drafting stops after the first token whose draft probability falls below
``eta`` (that token is kept), on EOS, or at ``max_draft``. Verification is an
exact greedy match against the target model; each round emits the accepted
prefix plus one correction (or bonus) token, so the output always equals plain
greedy decoding of the target.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .monitor import CloudStateEstimate, DelayModel, DeviceState
from .ngram import NGramModel
from .schema import SpecDecodeConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DraftSequence:
    tokens: Tuple[int, ...]
    probs: Tuple[float, ...]
    context_len: int

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Continuation:
    """Pre-drafted tokens; ``complete`` means a stop rule fired."""
    tokens: Tuple[int, ...] = ()
    probs: Tuple[float, ...] = ()
    complete: bool = False

    def truncated(self, steps: int) -> 'Continuation':
        if steps >= len(self.tokens):
            return self
        return Continuation(self.tokens[:steps], self.probs[:steps], complete=False)


@dataclass(frozen=True)
class VerificationResult:
    accepted_count: int
    correction: int

    @property
    def accept_length(self) -> int:
        return self.accepted_count + 1


@dataclass(frozen=True)
class ParallelDraftPlan:
    lambda_steps: int
    candidates: Dict[int, Continuation] = field(default_factory=dict)
    anchor_len: int = 0

    def truncated(self, steps: int) -> 'ParallelDraftPlan':
        """Keep only the first ``steps`` pre-drafted tokens of every candidate."""
        return replace(self, candidates={c: cont.truncated(steps) for c, cont in self.candidates.items()})


@dataclass(frozen=True)
class RoundStats:
    draft_len: int
    accepted_count: int
    emitted: int
    reused_steps: int = 0


def _extend(model: NGramModel, context: Sequence[int], tokens: List[int], probs: List[float],
            limit: int, cfg: SpecDecodeConfig) -> bool:
    """Append greedy draft tokens in place; True when a stop rule fired."""
    ctx = list(context) + tokens
    while len(tokens) < limit:
        token, prob = model.greedy_next(ctx)
        tokens.append(token)
        probs.append(prob)
        ctx.append(token)
        if token == model.eos_id or prob < cfg.eta:
            return True
    return limit >= cfg.max_draft


def draft(draft_model: NGramModel, context: Sequence[int], cfg: SpecDecodeConfig,
          prefix: Optional[Continuation] = None) -> DraftSequence:
    """Threshold-stopped greedy draft, optionally resumed from a pre-drafted prefix."""
    tokens = list(prefix.tokens) if prefix else []
    probs = list(prefix.probs) if prefix else []
    if not (prefix and prefix.complete and tokens):
        _extend(draft_model, context, tokens, probs, cfg.max_draft, cfg)
    return DraftSequence(tuple(tokens), tuple(probs), len(context))


def verify(target_model: NGramModel, context: Sequence[int], draft_tokens: Sequence[int]) -> VerificationResult:
    if not draft_tokens:
        raise ValueError("cannot verify an empty draft")
    ctx = list(context)
    for j, token in enumerate(draft_tokens):
        expected, _ = target_model.greedy_next(ctx)
        if expected != token:
            return VerificationResult(accepted_count=j, correction=expected)
        ctx.append(token)
    bonus, _ = target_model.greedy_next(ctx)
    return VerificationResult(accepted_count=len(draft_tokens), correction=bonus)


def emitted_tokens(draft_tokens: Sequence[int], result: VerificationResult, eos_id: Optional[int],
                   budget: int) -> List[int]:
    """Accepted prefix plus correction, cut after EOS and at ``budget`` tokens."""
    out = list(draft_tokens[:result.accepted_count]) + [result.correction]
    if eos_id is not None and eos_id in out:
        out = out[:out.index(eos_id) + 1]
    return out[:budget]


def speculative_decode(target: NGramModel, draft_model: NGramModel, prompt: Sequence[int],
                       cfg: SpecDecodeConfig, max_new: int) -> Tuple[List[int], List[RoundStats]]:
    if max_new < 0:
        raise ValueError(f"max_new must be >= 0, got {max_new}")
    output: List[int] = []
    stats: List[RoundStats] = []
    while len(output) < max_new:
        context = list(prompt) + output
        seq = draft(draft_model, context, cfg)
        result = verify(target, context, seq.tokens)
        new = emitted_tokens(seq.tokens, result, target.eos_id, max_new - len(output))
        output.extend(new)
        stats.append(RoundStats(len(seq), result.accepted_count, len(new)))
        if target.eos_id is not None and new[-1] == target.eos_id:
            break
    return output, stats


def plan_parallel_draft(device: DeviceState, predictor: DelayModel, estimate: CloudStateEstimate,
                        draft_len: int, A: float) -> int:
    """Draft steps that fit in one verification round trip with no cloud wait."""
    if draft_len < 1:
        raise ValueError(f"draft_len must be >= 1, got {draft_len}")
    mu = int(math.floor(estimate.mu + 0.5))
    round_trip = (draft_len * A / device.beta_up + predictor.query(mu)
                  + draft_len * A / device.beta_down)
    # tolerance keeps exact integer ratios from flooring one step short
    return max(0, math.floor(round_trip / device.gamma + 1e-9))


def generate_candidates(draft_model: NGramModel, context: Sequence[int], last_draft: DraftSequence,
                        cfg: SpecDecodeConfig, lambda_steps: int) -> ParallelDraftPlan:
    """Seed a continuation from each top-k token of the last draft step."""
    if lambda_steps < 0:
        raise ValueError(f"lambda_steps must be >= 0, got {lambda_steps}")
    base = list(context) + list(last_draft.tokens[:-1])
    limit = min(lambda_steps, cfg.max_draft)
    candidates: Dict[int, Continuation] = {}
    for token, _ in draft_model.top_k(base, cfg.k):
        tokens: List[int] = []
        probs: List[float] = []
        complete = False
        if limit > 0 and token != draft_model.eos_id:
            complete = _extend(draft_model, base + [token], tokens, probs, limit, cfg)
        candidates[token] = Continuation(tuple(tokens), tuple(probs), complete and bool(tokens))
    return ParallelDraftPlan(lambda_steps=lambda_steps, candidates=candidates, anchor_len=len(base))


def resolve_candidates(plan: ParallelDraftPlan, correction: int,
                       context_len: Optional[int] = None) -> Optional[Continuation]:
    """Continuation pre-drafted for ``correction``, if it replaced the last draft token."""
    if context_len is not None and context_len != plan.anchor_len:
        return None
    return plan.candidates.get(correction)
