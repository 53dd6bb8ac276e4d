"""
Cloud engine: ground-truth batch delay, continuous batch formation and the
P-stage pipeline that runs the middle submodel.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .chunking import split_prompt
from .network import to_ns
from .schema import CloudProfile

logger = logging.getLogger(__name__)

PREFILL_CHUNK = 'prefill-chunk'
VERIFY = 'verify'
DECODE_ONE = 'decode-1'


def true_delay(profile: CloudProfile, n_tokens: int) -> float:
    """Flat up to n_sat batched tokens, linear beyond."""
    if n_tokens < 1:
        raise ValueError(f"n_tokens must be >= 1, got {n_tokens}")
    return profile.d0 + profile.slope * max(0, n_tokens - profile.n_sat)


@dataclass(frozen=True)
class WorkItem:
    request_id: int
    kind: str
    token_count: int
    ready_ns: int
    seq: int
    chunk_index: Optional[int] = None
    last_chunk: bool = False

    def __post_init__(self):
        if self.token_count < 1:
            raise ValueError(f"work item token_count must be >= 1, got {self.token_count}")


@dataclass(frozen=True)
class Batch:
    items: Tuple[WorkItem, ...]

    @property
    def total_tokens(self) -> int:
        return sum(item.token_count for item in self.items)


@dataclass(frozen=True)
class BatchPolicy:
    max_batch_tokens: Optional[int] = None


class WorkQueue:
    """Pending cloud work in FCFS order of (ready time, seq)."""

    def __init__(self):
        self.items: List[WorkItem] = []

    def push(self, item: WorkItem):
        self.items.append(item)
        if len(self.items) > 1 and (self.items[-2].ready_ns, self.items[-2].seq) > (item.ready_ns, item.seq):
            self.items.sort(key=lambda it: (it.ready_ns, it.seq))

    def __len__(self) -> int:
        return len(self.items)


def form_batch(pending: WorkQueue, policy: BatchPolicy = BatchPolicy()) -> Optional[Batch]:
    """Take every ready verify/decode item and one next-in-order chunk per prefilling request.

    Selected items are removed from ``pending``. With a token cap, items that
    do not fit stay queued (the first item is always admitted).
    """
    if not pending.items:
        return None
    chosen: List[WorkItem] = []
    kept: List[WorkItem] = []
    blocked = set()
    total = 0
    cap = policy.max_batch_tokens
    for item in pending.items:
        if item.kind == PREFILL_CHUNK and item.request_id in blocked:
            kept.append(item)
            continue
        if cap is not None and chosen and total + item.token_count > cap:
            kept.append(item)
            if item.kind == PREFILL_CHUNK:
                blocked.add(item.request_id)
            continue
        chosen.append(item)
        total += item.token_count
        if item.kind == PREFILL_CHUNK:
            blocked.add(item.request_id)
    pending.items = kept
    return Batch(tuple(chosen))


@dataclass(frozen=True)
class PipelineState:
    stage_free_at: Tuple[int, ...]

    @classmethod
    def idle(cls, P: int) -> 'PipelineState':
        return cls(tuple([0] * P))


def stage_durations(total_ns: int, P: int) -> List[int]:
    """Split total_ns over P stages; remainder ns go to the last stages."""
    base, rem = divmod(total_ns, P)
    return [base + (1 if i >= P - rem else 0) for i in range(P)]


def advance_pipeline(state: PipelineState, batch: Batch, profile: CloudProfile,
                     now_ns: int) -> Tuple[int, PipelineState]:
    """Flow a batch through the stages; returns (completion ns, new state)."""
    if now_ns < 0:
        raise ValueError(f"now must be >= 0, got {now_ns}")
    durations = stage_durations(to_ns(true_delay(profile, batch.total_tokens)), len(state.stage_free_at))
    free = list(state.stage_free_at)
    t = now_ns
    for i, service in enumerate(durations):
        t = max(t, free[i]) + service
        free[i] = t
    return t, PipelineState(tuple(free))


@dataclass
class ChunkCostResult:
    total_compute_s: float
    prefill_done_s: float
    batch_tokens: List[int] = field(default_factory=list)


def chunked_prefill_cost(profile: CloudProfile, prompt_len: int, chunk_size: Optional[int],
                         n_decode: int, steps: int) -> ChunkCostResult:
    """Consecutive cloud-only batches of one prefilling request plus n_decode decoders.

    Once the prompt is fully processed the prefilling request decodes too.
    ``chunk_size=None`` sends the whole prompt in the first batch.
    """
    plan = split_prompt(prompt_len, chunk_size or prompt_len)
    queue = WorkQueue()
    state = PipelineState.idle(profile.P)
    now = 0
    seq = 0
    total = 0.0
    batch_tokens: List[int] = []
    prefill_done: Optional[int] = None
    for j, size in enumerate(plan.sizes):
        queue.push(WorkItem(0, PREFILL_CHUNK, size, 0, seq, j, j == len(plan) - 1))
        seq += 1
    for step in range(steps):
        decoders = n_decode + (1 if prefill_done is not None else 0)
        for r in range(decoders):
            queue.push(WorkItem(r + 1, DECODE_ONE, 1, now, seq))
            seq += 1
        batch = form_batch(queue)
        if batch is None:
            break
        now, state = advance_pipeline(state, batch, profile, now)
        total += true_delay(profile, batch.total_tokens)
        batch_tokens.append(batch.total_tokens)
        if any(item.last_chunk for item in batch.items):
            prefill_done = now
        logger.debug(f"step {step}: {batch.total_tokens} tokens, done at {now} ns")
    return ChunkCostResult(
        total_compute_s=total,
        prefill_done_s=(prefill_done or 0) / 1e9,
        batch_tokens=batch_tokens,
    )
