"""
Experiment execution: expands sweep points, runs each through the kernel
(optionally in a process pool), writes CSV reports and the effective config,
and optionally persists results to a SQL store.
"""

import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import pandas as pd
from dotenv import load_dotenv
from sqlalchemy import create_engine
from sqlalchemy.dialects.postgresql import insert as pg_insert
from sqlalchemy.dialects.sqlite import insert as sqlite_insert
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker

from . import kernel, report
from .hashing import run_key
from .models import Base, RequestRow, Run
from .schema import RunArgs, Scenario, load_scenario, parse_scenario, serialize_scenario, with_overrides

load_dotenv()

logger = logging.getLogger(__name__)

OUT_DIR = Path(os.getenv('HATSIM_OUT_DIR', './results'))
DB_PATH = os.getenv('HATSIM_DB')


@dataclass
class SweepPoint:
    index: int
    params: Dict[str, Any]
    scenario: Scenario


@dataclass
class PointResult:
    index: int
    run_key: str
    scenario_json: str
    summary: Dict[str, Any]
    requests: pd.DataFrame
    predictor: List[Tuple[int, int, int, float]]
    cdf: pd.DataFrame
    log_digest: str
    log_lines: List[str] = field(default_factory=list)


def apply_cli_overrides(base: Scenario, args: RunArgs) -> Scenario:
    """The scenario with the --seed and --framework overrides applied."""
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.framework is not None:
        overrides['framework'] = args.framework
    return with_overrides(base, overrides) if overrides else base


def expand_points(base: Scenario, args: RunArgs) -> List[SweepPoint]:
    """Cartesian product of the sweep axes over the overridden base."""
    base = apply_cli_overrides(base, args)
    if not args.sweeps:
        return [SweepPoint(0, {}, base)]
    keys = [axis.key for axis in args.sweeps]
    points = []
    for index, values in enumerate(itertools.product(*(axis.values for axis in args.sweeps))):
        params = dict(zip(keys, values))
        points.append(SweepPoint(index, params, with_overrides(base, params)))
    return points


def run_point(index: int, params: Dict[str, Any], scenario_json: str, keep_log: bool) -> PointResult:
    """Run one sweep point; arguments and result are plain data so this runs in worker processes."""
    scenario = parse_scenario(scenario_json)
    result = kernel.run(scenario)
    return PointResult(
        index=index,
        run_key=run_key(scenario_json, scenario.framework, scenario.seed),
        scenario_json=scenario_json,
        summary=report.summarize(result, scenario, index, params),
        requests=report.request_frame(result, index),
        predictor=result.predictor.dump(),
        cdf=report.cdf_frame(result),
        log_digest=result.log.digest(),
        log_lines=list(result.log.lines()) if keep_log else [],
    )


def run_points(points: List[SweepPoint], jobs: int, keep_log: bool) -> List[PointResult]:
    """Results ordered by point index whatever the pool's completion order."""
    payloads = [(p.index, p.params, serialize_scenario(p.scenario), keep_log) for p in points]
    if jobs <= 1 or len(points) <= 1:
        results = [run_point(*payload) for payload in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_point, *payload) for payload in payloads]
            results = [f.result() for f in futures]
    return sorted(results, key=lambda r: r.index)


def get_engine(db_path: Path) -> Engine:
    engine = create_engine(f"sqlite:///{db_path}", echo=False)
    Base.metadata.create_all(engine)
    return engine


@contextmanager
def get_session(engine: Engine) -> Session:
    """Get database session as context manager."""
    session = sessionmaker(bind=engine, expire_on_commit=False)()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


def save_run(session: Session, result: PointResult) -> str:
    """Upsert a run and its request records; saving the same run twice is a no-op."""
    insert_func = sqlite_insert if session.get_bind().dialect.name == 'sqlite' else pg_insert
    summary = result.summary
    run_values = {
        'run_key': result.run_key,
        'framework': summary['framework'],
        'seed': summary['seed'],
        'params': summary['params'],
        'scenario_json': result.scenario_json,
        'log_digest': result.log_digest,
        **{k: summary[k] for k in ('requests', 'mean_ttft_s', 'median_ttft_s', 'p90_ttft_s', 'mean_tbt_s',
                                   'prefill_sla_rate', 'decode_sla_rate', 'sla_vacuous',
                                   'mean_accept_length', 'pd_hit_rate')},
    }
    stmt = insert_func(Run).values(**run_values)
    stmt = stmt.on_conflict_do_update(
        index_elements=['run_key'],
        set_={k: stmt.excluded[k] for k in run_values if k != 'run_key'}
    ).returning(Run.run_key)
    key = session.execute(stmt).scalar_one()

    for row in result.requests.to_dict(orient='records'):
        values = {
            'run_key': key,
            'request_id': int(row['request_id']),
            'device_id': int(row['device_id']),
            'prompt_len': int(row['prompt_len']),
            'chunk_size': int(row['chunk_size']),
            'ttft_ns': int(row['ttft_ns']),
            'mean_tbt_ns': None if pd.isna(row['mean_tbt_ns']) else float(row['mean_tbt_ns']),
            'p99_tbt_ns': None if pd.isna(row['p99_tbt_ns']) else float(row['p99_tbt_ns']),
            'output_len': int(row['output_len']),
            'prefill_ok': bool(row['prefill_ok']),
            'decode_ok': bool(row['decode_ok']),
        }
        stmt = insert_func(RequestRow).values(**values)
        stmt = stmt.on_conflict_do_update(
            index_elements=['run_key', 'request_id'],
            set_={k: stmt.excluded[k] for k in values if k not in ('run_key', 'request_id')}
        )
        session.execute(stmt)
    return key


def write_outputs(out_dir: Path, base: Scenario, results: List[PointResult]):
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_text_atomic(serialize_scenario(base) + '\n', out_dir / 'scenario.json')
    report.write_summary([r.summary for r in results], out_dir / 'summary.csv')
    requests = pd.concat([r.requests for r in results], ignore_index=True)
    report.write_requests(requests, out_dir / 'requests.csv')
    for r in results:
        tag = f"{r.index:03d}"
        report.write_predictor(r.predictor, out_dir / f"predictor-{tag}.csv")
        report.write_cdf(r.cdf, out_dir / f"cdf-{tag}.csv")
        if r.log_lines:
            report.write_text_atomic(''.join(line + '\n' for line in r.log_lines), out_dir / f"events-{tag}.jsonl")
        if len(results) > 1:
            report.write_text_atomic(
                json.dumps({'params': r.summary['params'], 'run_key': r.run_key}, sort_keys=True) + '\n',
                out_dir / f"point-{tag}.json")


def execute(args: RunArgs) -> int:
    """Run every point of the arguments and write its reports; returns the exit status."""
    base = apply_cli_overrides(load_scenario(args.scenario_path), args)
    points = expand_points(base, args)
    logger.info(f"Running {len(points)} point(s) from {args.scenario_path} with {args.jobs} job(s)")

    results = run_points(points, args.jobs, args.event_log)
    for r in results:
        s = r.summary
        logger.info(f"point {r.index} [{s['framework']}]: {s['requests']} requests, "
                    f"mean TTFT {s['mean_ttft_s']}, mean TBT {s['mean_tbt_s']}")

    try:
        write_outputs(Path(args.out_dir), points[0].scenario if len(points) == 1 else base, results)
    except OSError as e:
        logger.error(f"Cannot write results to {args.out_dir}: {e}")
        raise

    db_path = args.db_path or (Path(DB_PATH) if DB_PATH else None)
    if db_path is not None:
        engine = get_engine(db_path)
        with get_session(engine) as session:
            for r in results:
                save_run(session, r)
        logger.info(f"Saved {len(results)} run(s) to {db_path}")
    return 0
