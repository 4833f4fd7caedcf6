"""Command-line entry point: ``dtxn-lab run`` and ``dtxn-lab check``."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any

import click
from marshmallow import ValidationError

from .checker import check_history
from .errors import DTxnError, MalformedHistory, NonQuiescent
from .history import History
from .runner import crash_sweep, run_scenario
from .scenario import WORKLOAD_NAMES, load_scenario

if TYPE_CHECKING:
    from .checker import Verdict
    from .runner import RunResult

EXIT_FAILED = 1
EXIT_USAGE = 2

_EXISTING = click.Path(exists=True, dir_okay=False)
_OUTPUT = click.Path(dir_okay=False)


def _emit(report: dict[str, Any]) -> None:
    for key, value in report.items():
        if isinstance(value, bool):
            value = str(value).lower()  # noqa: PLW2901
        click.echo(f"{key}={value}")


def _verdict_report(verdict: Verdict) -> dict[str, Any]:
    report: dict[str, Any] = {
        "serializable": verdict.passed,
        "witness": ",".join(verdict.witness) or "-",
        "permutations": verdict.permutations,
        "satisfying": verdict.satisfying,
        "problems": len(verdict.problems),
    }
    for index, problem in enumerate(verdict.problems):
        report[f"problem.{index}"] = problem
    return report


def _write(path: str | None, text: str) -> None:
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log protocol progress to stderr.")
def cli(*, verbose: bool) -> None:
    """Optimistic distributed transactions under a deterministic fault-injection harness."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.option("--scenario", "scenario_path", required=True, type=_EXISTING)
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option(
    "--crash-sweep",
    "sweep",
    is_flag=True,
    help="Kill a worker once at every suspension point.",
)
@click.option("--check", "check", is_flag=True, help="Run the serializability and history checks.")
@click.option("--dump-history", type=_OUTPUT, default=None)
@click.option("--dump-initial", type=_OUTPUT, default=None)
@click.option("--dump-final", type=_OUTPUT, default=None)
def run(  # noqa: PLR0913
    scenario_path: str,
    seed: int | None,
    *,
    sweep: bool,
    check: bool,
    dump_history: str | None,
    dump_initial: str | None,
    dump_final: str | None,
) -> None:
    """Run a scenario file and print a key=value report."""
    try:
        scenario = load_scenario(scenario_path)
    except ValidationError as exc:
        click.echo(f"invalid scenario: {exc.messages}", err=True)
        raise SystemExit(EXIT_USAGE) from exc
    if seed is not None:
        scenario = scenario.with_seed(seed)

    failed = False
    try:
        results: list[RunResult] = (
            list(crash_sweep(scenario)) if sweep else [run_scenario(scenario)]
        )
    except NonQuiescent as exc:
        click.echo(f"non-quiescent: {exc}", err=True)
        raise SystemExit(EXIT_FAILED) from exc

    last = results[0]
    report = dict(last.report)
    if sweep:
        report["sweep_runs"] = len(results)
        report["sweep_crashes"] = sum(int(result.report["crashes"]) for result in results)
    if check:
        problems = 0
        for result in results:
            verdict = check_history(
                result.history,
                result.final_dump,
                result.initial_dump,
                result.scenario.workload,
                queues=result.scenario.queues,
            )
            problems += len(verdict.problems)
            if result is last:
                report.update(_verdict_report(verdict))
        report["checked_runs"] = len(results)
        report["failed_checks"] = problems
        failed = problems > 0
    if "conserved" in report and not report["conserved"]:
        failed = True

    _write(dump_history, last.history.dump())
    _write(dump_initial, last.initial_dump)
    _write(dump_final, last.final_dump)
    _emit(report)
    if failed:
        raise SystemExit(EXIT_FAILED)


@cli.command()
@click.option("--history", "history_path", required=True, type=_EXISTING)
@click.option("--initial", "initial_path", required=True, type=_EXISTING)
@click.option("--final", "final_path", required=True, type=_EXISTING)
@click.option("--workload", type=click.Choice(WORKLOAD_NAMES), default=None)
@click.option("--queues", is_flag=True, help="Also check per-user queue ordering.")
def check(
    history_path: str,
    initial_path: str,
    final_path: str,
    workload: str | None,
    *,
    queues: bool,
) -> None:
    """Check a recorded run from its history and dumps."""
    try:
        history = History.parse(Path(history_path).read_text(encoding="utf-8"))
        verdict = check_history(
            history,
            Path(final_path).read_text(encoding="utf-8"),
            Path(initial_path).read_text(encoding="utf-8"),
            workload,
            queues=queues,
        )
    except MalformedHistory as exc:
        click.echo(f"malformed history: {exc}", err=True)
        raise SystemExit(EXIT_USAGE) from exc
    except DTxnError as exc:
        click.echo(f"check failed: {exc}", err=True)
        raise SystemExit(EXIT_FAILED) from exc
    _emit(_verdict_report(verdict))
    if not verdict.passed:
        raise SystemExit(EXIT_FAILED)


def main() -> None:
    cli()


__all__ = ("cli", "main")
