"""
Prompt chunking: choose the chunk size whose upload time covers the in-cloud
delay of the previous chunk, then split the prompt into contiguous ranges.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

from .monitor import CloudStateEstimate, DelayModel


@dataclass(frozen=True)
class ChunkPlan:
    chunk_size: int
    boundaries: Tuple[Tuple[int, int], ...]

    @property
    def sizes(self) -> List[int]:
        return [end - start for start, end in self.boundaries]

    def __len__(self) -> int:
        return len(self.boundaries)


def _tokens(value: float) -> int:
    return int(math.floor(value + 0.5))


def chunk_residual(pred: DelayModel, estimate: CloudStateEstimate, beta_up: float, A: float,
                   P: int, x: int) -> float:
    """Upload time of x tokens minus the pipelined waiting plus compute delay."""
    mu = _tokens(estimate.mu)
    lhs = x * A / beta_up
    rhs = (pred.query(mu) + pred.query(mu + x)) / P
    return lhs - rhs


def solve_chunk_size(pred: DelayModel, estimate: CloudStateEstimate, beta_up: float, A: float,
                     P: int, prompt_len: int) -> int:
    """Smallest X in [1, prompt_len] with X*A/beta_up >= (g(mu) + g(mu + X)) / P.

    Falls back to a single chunk (prompt_len) when no X is feasible.
    """
    if beta_up <= 0:
        raise ValueError(f"uplink bandwidth must be > 0, got {beta_up}")
    if A <= 0:
        raise ValueError(f"hidden-state size A must be > 0, got {A}")
    if P < 1:
        raise ValueError(f"pipeline length must be >= 1, got {P}")
    if prompt_len < 1:
        raise ValueError(f"prompt_len must be >= 1, got {prompt_len}")

    def feasible(x: int) -> bool:
        return chunk_residual(pred, estimate, beta_up, A, P, x) >= 0

    if not feasible(prompt_len):
        return prompt_len
    lo, hi = 1, prompt_len
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def split_prompt(prompt_len: int, chunk_size: int) -> ChunkPlan:
    if prompt_len < 1:
        raise ValueError(f"prompt_len must be >= 1, got {prompt_len}")
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    boundaries = tuple((start, min(start + chunk_size, prompt_len))
                       for start in range(0, prompt_len, chunk_size))
    return ChunkPlan(chunk_size=chunk_size, boundaries=boundaries)
