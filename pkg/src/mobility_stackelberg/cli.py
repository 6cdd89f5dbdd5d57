"""Command-line entry point: ``mobility-stackelberg <command> --scenario FILE``."""
from __future__ import annotations

import sys

import click

from . import scenario_io as sio
from .congestion import AssumptionViolation, solve_stackelberg_congestion
from .game_core import WelfareWeights
from .network.model import QpFailure

EXIT_VALIDATION = 2
EXIT_SOLVER = 3


def _load(path):
    try:
        return sio.load_scenario(path)
    except sio.ScenarioError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)


def _emit(text: str, out):
    if out:
        sio.write_text_atomic(out, text)
    else:
        click.echo(text, nl=False)


def _read_results(path):
    try:
        return sio.ResultsTable.from_csv(path)
    except (OSError, ValueError) as exc:
        click.echo(f"cannot read results {path}: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


def _common(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True,
                      help="Accepted for reproducibility records; all kernels are deterministic.")(fn)
    fn = click.option("--cache", "cache", type=click.Path(dir_okay=False), default=None,
                      help="SQLite cache of profile evaluations.")(fn)
    fn = click.option("--tolerance", type=float, default=None, help="Equilibrium and solver tolerance.")(fn)
    fn = click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker threads.")(fn)
    fn = click.option("--out", type=click.Path(dir_okay=False), default=None, help="Output file (default stdout).")(fn)
    fn = click.option("--scenario", required=True, type=click.Path(), help="Scenario YAML file.")(fn)
    return fn


@click.group()
def main():
    """Stackelberg games between a municipality and mobility service providers."""


@main.command("solve-congestion")
@_common
def solve_congestion(scenario, out, threads, tolerance, cache, seed):
    """Leader price and provider reactions in the congestion model."""
    sc = _load(scenario)
    if sc.congestion is None:
        click.echo("solve-congestion needs a congestion scenario", err=True)
        sys.exit(EXIT_VALIDATION)
    try:
        eq = solve_stackelberg_congestion(sc.congestion, grid_size=sc.config.grid_size,
                                          tolerance=tolerance if tolerance is not None else 1e-10)
    except AssumptionViolation as exc:
        click.echo(f"assumption violated: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except (ValueError, ArithmeticError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    _emit(sio.congestion_table(eq, sc.congestion).to_csv(), out)


@main.command("solve-network")
@_common
@click.option("--profile", default=None, help="Evaluate one profile given as 'leader,amod,mm,taxi' indices.")
def solve_network(scenario, out, threads, tolerance, cache, seed, profile):
    """Selected equilibrium of the network game, or one profile with --profile."""
    sc = _load(scenario)
    if profile is not None:
        try:
            idx = tuple(int(p) for p in profile.split(","))
        except ValueError:
            click.echo(f"invalid profile {profile!r}", err=True)
            sys.exit(EXIT_VALIDATION)
        try:
            table = sio.evaluate_single(sc, idx)
        except sio.ScenarioError as exc:
            click.echo(str(exc), err=True)
            sys.exit(EXIT_VALIDATION)
        except (QpFailure, ArithmeticError, ValueError) as exc:
            click.echo(f"solver failure: {exc}", err=True)
            sys.exit(EXIT_SOLVER)
        _emit(table.to_csv(), out)
        return
    table = _pipeline(sc, threads, tolerance, cache)
    chosen = [r for r in table.rows if r["selected"]]
    _emit(sio.ResultsTable(chosen).to_csv(), out)


def _pipeline(sc, threads, tolerance, cache):
    try:
        return sio.run_pipeline(sc, threads=threads, tolerance=tolerance, cache_path=cache)
    except sio.ScenarioError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)


@main.command("enumerate")
@_common
def enumerate_cmd(scenario, out, threads, tolerance, cache, seed):
    """All follower equilibria for every leader action (no flags set)."""
    sc = _load(scenario)
    try:
        table = sio.enumerate_equilibria(sc, threads=threads, tolerance=tolerance, cache_path=cache)
    except sio.ScenarioError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    _emit(table.to_csv(), out)


@main.command("sweep")
@_common
def sweep(scenario, out, threads, tolerance, cache, seed):
    """Full sweep: equilibria, rational flags and the selected equilibrium."""
    sc = _load(scenario)
    _emit(_pipeline(sc, threads, tolerance, cache).to_csv(), out)


@main.command("filter-rational")
@click.option("--results", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--only", is_flag=True, help="Write only the rational rows.")
def filter_rational(results, out, only):
    """Flag equilibria not dominated in all three metrics."""
    table = sio.mark_rational(_read_results(results))
    if only:
        table = sio.ResultsTable([r for r in table.rows if r["rational"]])
    _emit(table.to_csv(), out)


@main.command("select")
@click.option("--results", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k1", type=float, required=True, help="Weight on customer cost.")
@click.option("--k2", type=float, required=True, help="Weight on emission cost.")
@click.option("--k3", type=float, required=True, help="Weight on public revenue.")
@click.option("--policy", type=click.Choice(["optimistic", "pessimistic"]), default="optimistic")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def select(results, k1, k2, k3, policy, out):
    """Re-select the equilibrium for new welfare weights."""
    try:
        weights = WelfareWeights(k1, k2, k3)
    except ValueError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    _emit(sio.mark_selected(_read_results(results), weights, policy).to_csv(), out)


@main.command("export-plot-data")
@click.option("--results", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--axes", default="customer_cost,public_revenue,emission_cost", show_default=True)
@click.option("--classify", type=click.Choice(list(sio.CLASSIFICATIONS)), default="tax", show_default=True)
@click.option("--scale", type=float, default=1e5, show_default=True, help="Divide metrics by this ($/h).")
@click.option("--rational-only", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def export_plot(results, axes, classify, scale, rational_only, out):
    """Plot-ready metrics with a tax or AMoD-share class column."""
    try:
        text = sio.export_plot_data(_read_results(results), tuple(a.strip() for a in axes.split(",")),
                                    classify, scale, rational_only)
    except ValueError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    _emit(text, out)


if __name__ == "__main__":
    main()
