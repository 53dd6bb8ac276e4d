"""
State monitoring: EMA estimates of the cloud workload, a binned predictor of
in-cloud computation delay versus batched token size, and EMA device state.

All updates are functional and return new values.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Protocol, Tuple

logger = logging.getLogger(__name__)


class DelayModel(Protocol):
    """Anything that predicts batch computation delay (seconds) from batched tokens."""

    def query(self, tokens: int) -> float:
        ...


def ema_update(prev: float, obs: float, alpha: float) -> float:
    """alpha * prev + (1 - alpha) * obs."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * prev + (1.0 - alpha) * obs


@dataclass(frozen=True)
class CloudStateEstimate:
    """EMA of batched token size plus the latest raw observation."""
    mu: float = 0.0
    last_obs_tokens: int = 0
    last_delay: float = 0.0
    alpha: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    def observe(self, batched_tokens: int, delay: float) -> 'CloudStateEstimate':
        return replace(self, mu=ema_update(self.mu, batched_tokens, self.alpha),
                       last_obs_tokens=batched_tokens, last_delay=delay)


@dataclass(frozen=True)
class DelayPredictor:
    """Binned EMA table: bin index -> predicted delay in seconds."""
    bin_width: int = 16
    alpha: float = 0.8
    default_delay: float = 0.025
    bins: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.bin_width < 1:
            raise ValueError(f"bin_width must be >= 1, got {self.bin_width}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.default_delay <= 0:
            raise ValueError(f"default_delay must be > 0, got {self.default_delay}")

    def bin_of(self, tokens: int) -> int:
        return tokens // self.bin_width

    def observe(self, batched_tokens: int, delay: float) -> 'DelayPredictor':
        if batched_tokens < 1:
            raise ValueError(f"batched_tokens must be >= 1, got {batched_tokens}")
        if delay <= 0:
            raise ValueError(f"observed delay must be > 0, got {delay}")
        idx = self.bin_of(batched_tokens)
        bins = dict(self.bins)
        # first observation initializes the bin
        bins[idx] = ema_update(bins[idx], delay, self.alpha) if idx in bins else delay
        return replace(self, bins=bins)

    def query(self, tokens: int) -> float:
        if tokens < 0:
            raise ValueError(f"tokens must be >= 0, got {tokens}")
        if not self.bins:
            return self.default_delay
        idx = self.bin_of(tokens)
        value = self.bins.get(idx)
        if value is not None:
            return value
        nearest = min(self.bins, key=lambda b: (abs(b - idx), b))
        return self.bins[nearest]

    def dump(self) -> List[Tuple[int, int, int, float]]:
        """Rows of (bin index, first token, last token, EMA delay seconds)."""
        return [(b, b * self.bin_width, (b + 1) * self.bin_width - 1, self.bins[b])
                for b in sorted(self.bins)]


@dataclass(frozen=True)
class DeviceState:
    """EMA draft-step delay (s/step) and link bandwidths (bytes/s)."""
    gamma: float
    beta_up: float
    beta_down: float

    def __post_init__(self):
        if min(self.gamma, self.beta_up, self.beta_down) <= 0:
            raise ValueError(f"device state must be strictly positive, got {self}")


def predictor_observe(pred: DelayPredictor, batched_tokens: int, delay: float) -> DelayPredictor:
    return pred.observe(batched_tokens, delay)


def predictor_query(pred: DelayPredictor, tokens: int) -> float:
    return pred.query(tokens)


def device_observe(state: DeviceState, gamma_obs: float, up_obs: float, down_obs: float,
                   alpha: float) -> DeviceState:
    if min(gamma_obs, up_obs, down_obs) <= 0:
        raise ValueError("device observations must be positive")
    return DeviceState(
        gamma=ema_update(state.gamma, gamma_obs, alpha),
        beta_up=ema_update(state.beta_up, up_obs, alpha),
        beta_down=ema_update(state.beta_down, down_obs, alpha),
    )
