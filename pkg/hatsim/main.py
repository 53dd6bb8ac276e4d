import click
import json
import logging
import os
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .cloud import chunked_prefill_cost
from .distill import DistillationInput, distillation_loss, distillation_loss_grad
from .frameworks import FrameworkFactory
from .runner import OUT_DIR, execute
from .schema import (CloudProfile, ModelConfig, RunArgs, ScenarioError, default_scenario, load_scenario,
                     parse_sweep, serialize_scenario)

logging.basicConfig(
    level=getattr(logging, os.getenv('LOG_LEVEL', 'INFO')),
    format='%(asctime)s - %(levelname)s - %(message)s'
)

logger = logging.getLogger(__name__)

FRAMEWORK_CHOICE = click.Choice(FrameworkFactory().get_supported_frameworks())


def _run_args(scenario, seed, framework, out, sweeps, event_log, jobs, db) -> RunArgs:
    try:
        return RunArgs(
            scenario_path=scenario,
            seed=seed,
            framework=framework,
            out_dir=out,
            sweeps=[parse_sweep(s) for s in sweeps],
            event_log=event_log,
            jobs=jobs,
            db_path=db,
        )
    except (ValidationError, ScenarioError) as e:
        raise click.BadParameter(str(e)) from None


def _execute(args: RunArgs):
    try:
        execute(args)
    except ValueError as e:
        raise click.ClickException(f"invalid scenario: {e}") from None
    except OSError as e:
        raise click.ClickException(f"cannot write results: {e}") from None


def run_options(f):
    """Options shared by run and sweep."""
    options = [
        click.option('--scenario', type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
                     help='Scenario JSON file'),
        click.option('--seed', type=click.IntRange(min=0), default=None, help='Override the scenario seed'),
        click.option('--framework', type=FRAMEWORK_CHOICE, default=None, help='Override the framework variant'),
        click.option('--out', type=click.Path(file_okay=False, path_type=Path), default=OUT_DIR,
                     show_default=True, help='Output directory'),
        click.option('--event-log', is_flag=True, help='Also write the line-delimited event log per point'),
        click.option('--db', type=click.Path(dir_okay=False, path_type=Path), default=None,
                     help='SQLite results store (default: $HATSIM_DB, unset disables)'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


@click.group()
def cli():
    """Device-cloud speculative inference simulator."""
    pass


@cli.command()
@run_options
@click.option('--sweep', 'sweeps', multiple=True, help='key=v1,v2 (repeatable, forms a Cartesian product)')
@click.option('--jobs', type=click.IntRange(min=1), default=1, help='Sweep points run in parallel')
def run(scenario, seed, framework, out, event_log, db, sweeps, jobs):
    """Simulate one scenario and write per-request and summary CSVs."""
    _execute(_run_args(scenario, seed, framework, out, sweeps, event_log, jobs, db))


@cli.command()
@run_options
@click.option('--sweep', 'sweeps', multiple=True, required=True,
              help='key=v1,v2 over a dotted scenario path, framework or seed (repeatable)')
@click.option('--jobs', type=click.IntRange(min=1), default=1, help='Sweep points run in parallel')
def sweep(scenario, seed, framework, out, event_log, db, sweeps, jobs):
    """Run the Cartesian product of the sweep axes; one summary row per point.

    Outputs do not depend on --jobs.
    """
    _execute(_run_args(scenario, seed, framework, out, sweeps, event_log, jobs, db))


@cli.command()
@click.option('--scenario', type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
def validate(scenario):
    """Parse a scenario and report errors without running it."""
    try:
        parsed = load_scenario(scenario)
    except ScenarioError as e:
        raise click.ClickException(str(e)) from None
    click.echo(f"OK: {parsed.num_devices} device(s), framework {parsed.framework}")


@cli.command('dump-defaults')
def dump_defaults():
    """Print a minimal scenario with every default filled."""
    click.echo(serialize_scenario(default_scenario()))


@cli.command('chunk-cost')
@click.option('--prompt-len', type=click.IntRange(min=1), default=2048, show_default=True)
@click.option('--chunk-size', type=click.IntRange(min=1), default=None, help='Omit to prefill in one batch')
@click.option('--decoders', type=click.IntRange(min=0), default=9, show_default=True)
@click.option('--steps', type=click.IntRange(min=1), default=64, show_default=True)
@click.option('--pipeline', type=click.IntRange(min=1), default=1, show_default=True, help='Pipeline stages')
def chunk_cost(prompt_len, chunk_size, decoders, steps, pipeline):
    """Cloud-only cost of chunked versus whole-prompt prefill next to decoding requests."""
    profile = CloudProfile(P=pipeline)
    chunked = chunked_prefill_cost(profile, prompt_len, chunk_size, decoders, steps)
    whole = chunked_prefill_cost(profile, prompt_len, None, decoders, steps)
    click.echo(f"chunk size         {chunk_size or prompt_len}")
    click.echo(f"total compute      {chunked.total_compute_s:.4f} s (whole prompt {whole.total_compute_s:.4f} s)")
    click.echo(f"prefill completion {chunked.prefill_done_s:.4f} s (whole prompt {whole.prefill_done_s:.4f} s)")
    if whole.prefill_done_s > 0:
        click.echo(f"prefill slowdown   {chunked.prefill_done_s / whole.prefill_done_s:.2f}x")


@cli.command('distill-loss')
@click.option('--features', type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help='JSON object with f_target, f_draft and head')
@click.option('--scenario', type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help='Take the cross-entropy weight from this scenario (default: model.w_ce default)')
def distill_loss(features, scenario):
    """Distillation loss and its gradient norm for one pair of feature vectors."""
    try:
        model = load_scenario(scenario).model if scenario else ModelConfig()
        data = json.loads(features.read_text())
        inp = DistillationInput(f_target=data['f_target'], f_draft=data['f_draft'], head=data['head'],
                                w_ce=model.w_ce)
    except ScenarioError as e:
        raise click.ClickException(str(e)) from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise click.ClickException(f"invalid features file: {e}") from None
    grad = distillation_loss_grad(inp)
    click.echo(f"w_ce               {inp.w_ce:g}")
    click.echo(f"loss               {distillation_loss(inp):.6f}")
    click.echo(f"gradient norm      {float(np.linalg.norm(grad)):.6f}")


if __name__ == '__main__':
    cli()
