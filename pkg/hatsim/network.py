"""
Time base, transmission delay and FIFO device resources.

Simulation time is integer nanoseconds; durations are computed in floating
point seconds and rounded half-up.
"""

import math
from dataclasses import dataclass
from typing import Tuple

NS_PER_S = 1_000_000_000


def to_ns(seconds: float) -> int:
    return int(math.floor(seconds * NS_PER_S + 0.5))


def tx_delay(n_tokens: int, A: float, bandwidth: float) -> float:
    """Seconds to move n_tokens hidden states of A bytes over a link."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    return n_tokens * A / bandwidth


@dataclass
class FifoResource:
    """A link or compute unit serving jobs one at a time in submission order."""
    name: str
    free_at: int = 0

    def reserve(self, now_ns: int, duration_ns: int) -> Tuple[int, int]:
        """Queue a job; returns (start ns, end ns)."""
        start = max(now_ns, self.free_at)
        end = start + duration_ns
        self.free_at = end
        return start, end
