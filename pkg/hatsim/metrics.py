"""
Per-request latency metrics, SLA compliance and CDFs.

Everything here works from emission timestamps alone, so the same code
derives records from the kernel's bookkeeping and, independently, from a raw
event log.
"""

import logging
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from .network import NS_PER_S, to_ns
from .schema import SlaConfig

logger = logging.getLogger(__name__)

DECODE_WINDOW = 10
PREFILL_UNIT = 128


class IncompleteLogError(ValueError):
    """Raised when an event log is missing completions or violates emission order."""


class RequestRecord(BaseModel):
    """Latency record of one finished request; all times in integer ns."""
    model_config = ConfigDict(frozen=True)

    request_id: int = Field(..., ge=0)
    device_id: int = Field(..., ge=0)
    prompt_len: int = Field(..., ge=1)
    chunk_size: int = Field(..., ge=1)
    arrival_ns: int = Field(..., ge=0)
    ttft_ns: int = Field(..., gt=0, description="First emission minus arrival")
    tbt_ns: Tuple[int, ...] = Field(default=(), description="Gaps between consecutive emissions")
    output_len: int = Field(..., ge=1)
    prefill_ok: bool
    decode_ok: bool

    @model_validator(mode='after')
    def check_tbt(self):
        if len(self.tbt_ns) != self.output_len - 1:
            raise ValueError(f"expected {self.output_len - 1} tbt values, got {len(self.tbt_ns)}")
        if any(gap <= 0 for gap in self.tbt_ns):
            raise ValueError("tbt values must be > 0")
        return self

    @computed_field
    @property
    def ttft(self) -> float:
        return self.ttft_ns / NS_PER_S

    @computed_field
    @property
    def mean_tbt_ns(self) -> Optional[float]:
        return float(np.mean(self.tbt_ns)) if self.tbt_ns else None

    @computed_field
    @property
    def p99_tbt_ns(self) -> Optional[float]:
        return float(np.percentile(self.tbt_ns, 99)) if self.tbt_ns else None

    @property
    def last_emission_ns(self) -> int:
        return self.arrival_ns + self.ttft_ns + sum(self.tbt_ns)


class SlaRates(NamedTuple):
    prefill_rate: float
    decode_rate: float
    vacuous: bool = False


def prefill_compliant(ttft_ns: int, prompt_len: int, prefill_sla: float) -> bool:
    """TTFT within prefill_sla seconds per 128 prompt tokens."""
    return ttft_ns <= to_ns(prefill_sla * prompt_len / PREFILL_UNIT)


def decode_compliant(tbt_ns: Sequence[int], decode_sla: float) -> bool:
    """Every 10 consecutive gaps within decode_sla; shorter outputs use the scaled total."""
    gaps = np.asarray(tbt_ns, dtype=np.int64)
    if len(gaps) < DECODE_WINDOW:
        return int(gaps.sum()) <= to_ns(decode_sla * len(gaps) / DECODE_WINDOW)
    sums = np.cumsum(np.concatenate(([0], gaps)))
    windows = sums[DECODE_WINDOW:] - sums[:-DECODE_WINDOW]
    return bool(windows.max() <= to_ns(decode_sla))


def make_record(request_id: int, device_id: int, prompt_len: int, chunk_size: int, arrival_ns: int,
                emissions_ns: Sequence[int], slas: SlaConfig) -> RequestRecord:
    if not emissions_ns:
        raise IncompleteLogError(f"request {request_id} emitted no tokens")
    if emissions_ns[0] <= arrival_ns:
        raise IncompleteLogError(f"request {request_id} emitted at {emissions_ns[0]} before arriving at {arrival_ns}")
    tbt = tuple(int(b - a) for a, b in zip(emissions_ns, emissions_ns[1:]))
    if any(gap <= 0 for gap in tbt):
        raise IncompleteLogError(f"request {request_id} emissions are not strictly increasing")
    ttft = int(emissions_ns[0] - arrival_ns)
    return RequestRecord(
        request_id=request_id,
        device_id=device_id,
        prompt_len=prompt_len,
        chunk_size=chunk_size,
        arrival_ns=arrival_ns,
        ttft_ns=ttft,
        tbt_ns=tbt,
        output_len=len(emissions_ns),
        prefill_ok=prefill_compliant(ttft, prompt_len, slas.prefill_s_per_128),
        decode_ok=decode_compliant(tbt, slas.decode_s_per_10),
    )


def compute_request_metrics(log, slas: SlaConfig = SlaConfig()) -> List[RequestRecord]:
    """Rebuild request records by a single scan over a raw event log.

    Arrivals open a request, head invocations with ``emitted`` tokens emit them
    1 ns apart from the event time, and request-complete closes it.
    """
    opened: Dict[int, dict] = {}
    emissions: Dict[int, List[int]] = {}
    closed = set()
    last = (-1, -1)
    for entry in log.entries:
        if (entry.time_ns, entry.seq) <= last:
            raise IncompleteLogError(f"event seq {entry.seq} is out of (time, seq) order")
        last = (entry.time_ns, entry.seq)
        rid = entry.request
        if entry.kind == 'arrival':
            opened[rid] = dict(entry.detail, arrival_ns=entry.time_ns)
            emissions[rid] = []
        elif entry.kind == 'local-compute-done' and entry.detail.get('stage') == 'head':
            if rid not in opened or rid in closed:
                raise IncompleteLogError(f"emission for request {rid} outside its lifetime")
            emissions[rid].extend(entry.time_ns + j for j in range(entry.detail['emitted']))
        elif entry.kind == 'request-complete':
            if rid not in opened:
                raise IncompleteLogError(f"completion of unknown request {rid}")
            closed.add(rid)

    missing = sorted(set(opened) - closed)
    if missing:
        raise IncompleteLogError(f"requests {missing[:10]} never completed")

    return [
        make_record(rid, info['device'], info['prompt_len'], info['chunk_size'], info['arrival_ns'],
                    emissions[rid], slas)
        for rid, info in sorted(opened.items())
    ]


def sla_compliance(records: Sequence[RequestRecord], prefill_sla: float, decode_sla: float) -> SlaRates:
    """Fractions of requests meeting each SLA; an empty set is vacuously compliant."""
    if prefill_sla <= 0 or decode_sla <= 0:
        raise ValueError(f"SLAs must be > 0, got prefill={prefill_sla}, decode={decode_sla}")
    if not records:
        return SlaRates(1.0, 1.0, vacuous=True)
    prefill = sum(prefill_compliant(r.ttft_ns, r.prompt_len, prefill_sla) for r in records)
    decode = sum(decode_compliant(r.tbt_ns, decode_sla) for r in records)
    return SlaRates(prefill / len(records), decode / len(records))


def cdf(values: Iterable[float]) -> List[Tuple[float, float]]:
    """Empirical CDF as (value, fraction of values <= value) steps."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cdf of an empty sequence")
    uniq, counts = np.unique(arr, return_counts=True)
    fractions = np.cumsum(counts) / arr.size
    return [(float(v), float(f)) for v, f in zip(uniq, fractions)]
