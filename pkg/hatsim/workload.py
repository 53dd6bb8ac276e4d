"""
Workload generation: Poisson arrivals per device, prompt lengths and prompt
content sampled from the corpus. Every stream is seeded from the scenario seed
through hashing.derive_seed, one stream per device and subsystem.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .hashing import derive_seed
from .schema import PromptLengths, Scenario

logger = logging.getLogger(__name__)

# (mean, std) of prompt token length for the dataset presets
DATASET_PRESETS = {
    'specbench': (351.2, 397.3),
    'cnndm': (1036.6, 511.8),
}


@dataclass(frozen=True)
class Arrival:
    time: float
    device: int
    prompt_len: int
    prompt_offset: int
    index_on_device: int


def gen_arrivals(rate: float, horizon: float, seed: int) -> List[float]:
    """Poisson arrival times in [0, horizon) with mean inter-arrival 1/rate."""
    if rate < 0:
        raise ValueError(f"rate must be >= 0, got {rate}")
    if rate == 0:
        return []
    rng = np.random.default_rng(seed)
    times: List[float] = []
    t = 0.0
    block = max(16, int(rate * horizon * 1.1) + 16)
    while True:
        for gap in rng.exponential(1.0 / rate, size=block):
            t += float(gap)
            if t >= horizon:
                return times
            times.append(t)


def lognormal_params(mean: float, std: float) -> Tuple[float, float]:
    sigma2 = math.log(1.0 + (std / mean) ** 2)
    return math.log(mean) - sigma2 / 2.0, math.sqrt(sigma2)


def sample_prompt_lengths(spec: PromptLengths, n: int, rng: np.random.Generator) -> List[int]:
    if spec.kind == 'fixed':
        return [spec.value] * n
    mean, std = (spec.mean, spec.std) if spec.kind == 'lognormal' else DATASET_PRESETS[spec.kind]
    mu, sigma = lognormal_params(mean, std)
    draws = rng.lognormal(mu, sigma, size=n)
    return [int(np.clip(round(x), spec.min_len, spec.max_len)) for x in draws]


def prompt_tokens(corpus: Sequence[int], offset: int, length: int) -> List[int]:
    """A cyclic slice of the corpus."""
    n = len(corpus)
    return [corpus[(offset + i) % n] for i in range(length)]


def generate_workload(scenario: Scenario, corpus_len: int) -> List[Arrival]:
    """All arrivals of the scenario in time order (ties by device, then index)."""
    wl = scenario.workload
    n_devices = scenario.num_devices
    per_device_rate = wl.rate / n_devices
    arrivals: List[Arrival] = []
    counts = [0] * n_devices

    for device in range(n_devices):
        times = gen_arrivals(per_device_rate, wl.horizon, derive_seed(scenario.seed, 'device', device, 'arrivals'))
        rng = np.random.default_rng(derive_seed(scenario.seed, 'device', device, 'prompts'))
        lengths = sample_prompt_lengths(wl.prompt_lengths, len(times), rng)
        offsets = rng.integers(0, corpus_len, size=len(times))
        for t, length, offset in zip(times, lengths, offsets):
            arrivals.append(Arrival(t, device, length, int(offset), counts[device]))
            counts[device] += 1

    rng = np.random.default_rng(derive_seed(scenario.seed, 'explicit', 'prompts'))
    for explicit in wl.explicit_arrivals:
        offset = int(rng.integers(0, corpus_len))
        arrivals.append(Arrival(explicit.time, explicit.device, explicit.prompt_len, offset, -1))

    arrivals.sort(key=lambda a: (a.time, a.device, a.index_on_device))
    # index_on_device follows time order so mode switches count requests as generated
    seen = [0] * n_devices
    ordered = []
    for a in arrivals:
        ordered.append(Arrival(a.time, a.device, a.prompt_len, a.prompt_offset, seen[a.device]))
        seen[a.device] += 1
    logger.debug(f"Generated {len(ordered)} arrivals over {n_devices} devices")
    return ordered
