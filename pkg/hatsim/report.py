"""
CSV reports: one row per request and one summary row per run.

Files are written to a temporary sibling and renamed into place, so a reader
never sees a partial file even while sweep points run concurrently.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .kernel import SimulationResult
from .metrics import cdf, sla_compliance
from .schema import Scenario

logger = logging.getLogger(__name__)

SHORT_OUTPUT_NOTE = ("# decode SLA: outputs shorter than 11 tokens are judged on the scaled total "
                     "sum(tbt) <= decode_sla * len(tbt) / 10")
VACUOUS_NOTE = "# sla_vacuous=True marks runs without requests; their SLA rates are 1.0 by convention"

REQUEST_COLUMNS = [
    'point', 'request_id', 'device_id', 'framework', 'prompt_len', 'chunk_size', 'ttft_ns', 'mean_tbt_ns',
    'p99_tbt_ns', 'output_len', 'prefill_ok', 'decode_ok', 'ttft_local_ns', 'ttft_comm_ns', 'ttft_cloud_ns',
]

SUMMARY_COLUMNS = [
    'point', 'framework', 'seed', 'requests', 'mean_ttft_s', 'median_ttft_s', 'p90_ttft_s', 'mean_tbt_s',
    'prefill_sla_rate', 'decode_sla_rate', 'sla_vacuous', 'mean_accept_length', 'pd_hit_rate',
    'comm_share', 'params',
]


def request_frame(result: SimulationResult, point: int = 0) -> pd.DataFrame:
    rows = []
    for r in result.records:
        parts = result.breakdown.get(r.request_id)
        rows.append({
            'point': point,
            'request_id': r.request_id,
            'device_id': r.device_id,
            'framework': result.framework,
            'prompt_len': r.prompt_len,
            'chunk_size': r.chunk_size,
            'ttft_ns': r.ttft_ns,
            'mean_tbt_ns': r.mean_tbt_ns,
            'p99_tbt_ns': r.p99_tbt_ns,
            'output_len': r.output_len,
            'prefill_ok': r.prefill_ok,
            'decode_ok': r.decode_ok,
            'ttft_local_ns': parts.local_ns if parts else None,
            'ttft_comm_ns': parts.comm_ns if parts else None,
            'ttft_cloud_ns': parts.cloud_ns if parts else None,
        })
    return pd.DataFrame(rows, columns=REQUEST_COLUMNS)


def summarize(result: SimulationResult, scenario: Scenario, point: int = 0,
              params: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Summary row of one run.

    Mean TBT pools every gap of every request. Accept length averages tokens
    emitted per decode round; the hit rate is the share of speculative rounds
    that resumed from a pre-drafted continuation.
    """
    records = result.records
    rates = sla_compliance(records, scenario.slas.prefill_s_per_128, scenario.slas.decode_s_per_10)
    ttft = np.array([r.ttft_ns for r in records], dtype=np.float64) / 1e9
    gaps = np.array([g for r in records for g in r.tbt_ns], dtype=np.float64) / 1e9
    rounds = [s for stats in result.rounds.values() for s in stats]
    spec_rounds = [s for s in rounds if s.draft_len > 0]
    comm = [result.breakdown[r.request_id].comm_ns / r.ttft_ns for r in records if r.request_id in result.breakdown]

    def stat(values: np.ndarray, fn) -> Optional[float]:
        return float(fn(values)) if values.size else None

    return {
        'point': point,
        'framework': result.framework,
        'seed': scenario.seed,
        'requests': len(records),
        'mean_ttft_s': stat(ttft, np.mean),
        'median_ttft_s': stat(ttft, np.median),
        'p90_ttft_s': stat(ttft, lambda v: np.percentile(v, 90)),
        'mean_tbt_s': stat(gaps, np.mean),
        'prefill_sla_rate': rates.prefill_rate,
        'decode_sla_rate': rates.decode_rate,
        'sla_vacuous': rates.vacuous,
        'mean_accept_length': float(np.mean([s.accepted_count + 1 for s in rounds])) if rounds else None,
        'pd_hit_rate': (sum(1 for s in spec_rounds if s.reused_steps > 0) / len(spec_rounds)) if spec_rounds else None,
        'comm_share': float(np.mean(comm)) if comm else None,
        'params': json.dumps(params or {}, sort_keys=True),
    }


def cdf_frame(result: SimulationResult) -> pd.DataFrame:
    """Empirical CDFs of TTFT and of pooled TBT gaps in seconds; a metric without samples has no rows."""
    rows = []
    samples = {
        'ttft': [r.ttft_ns / 1e9 for r in result.records],
        'tbt': [g / 1e9 for r in result.records for g in r.tbt_ns],
    }
    for metric, values in samples.items():
        if values:
            rows.extend((metric, value, fraction) for value, fraction in cdf(values))
    return pd.DataFrame(rows, columns=['metric', 'value_s', 'fraction'])


def summary_frame(rows: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=SUMMARY_COLUMNS)


def write_csv_atomic(frame: pd.DataFrame, path: Path, notes: Sequence[str] = ()):
    """Write notes as leading '#' lines, then the frame, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            for note in notes:
                f.write(note + '\n')
            frame.to_csv(f, index=False, lineterminator='\n')
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {len(frame)} rows to {path}")


def write_text_atomic(text: str, path: Path):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_requests(frame: pd.DataFrame, path: Path):
    write_csv_atomic(frame, path, [SHORT_OUTPUT_NOTE])


def write_summary(rows: List[Dict[str, Any]], path: Path):
    write_csv_atomic(summary_frame(rows), path, [SHORT_OUTPUT_NOTE, VACUOUS_NOTE])


def write_predictor(rows: Sequence[Tuple[int, int, int, float]], path: Path):
    """Delay predictor table: bin, token range and EMA delay."""
    frame = pd.DataFrame(list(rows), columns=['bin', 'first_token', 'last_token', 'delay_s'])
    write_csv_atomic(frame, path)


def write_cdf(frame: pd.DataFrame, path: Path):
    write_csv_atomic(frame, path)


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')
