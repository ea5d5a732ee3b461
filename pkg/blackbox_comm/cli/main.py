#!/usr/bin/env python3
"""
bbcomm: command-line runner for JSON-configured experiments.

Exit codes: 0 ok, 1 internal error, 2 config schema error,
3 infeasible or invalid parameters, 4 resource guard.
"""

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import click
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from blackbox_comm.cli.plots import plot_results
from blackbox_comm.cli.results import write_results
from blackbox_comm.core.config import settings
from blackbox_comm.core.errors import BlackBoxCommError, ConfigSchemaError
from blackbox_comm.models.experiment import EXPERIMENT_KINDS, ExperimentConfig, load_config
from blackbox_comm.models.reports import ResultRow
from blackbox_comm.services.experiment_service import ExperimentService
from blackbox_comm.utils.logger import set_level, setup_logger

logger = setup_logger("blackbox_comm")

console = Console()
err_console = Console(stderr=True)


@dataclass
class CliOptions:
    seed: Optional[int]
    out_dir: Path
    workers: Optional[int]
    quiet: bool
    plot_format: str
    plot: bool
    timing: bool


def _print_diagnostics(error: ConfigSchemaError) -> None:
    source = f" in {error.source}" if error.source else ""
    err_console.print(f"[bold red]❌ Invalid config{source}[/bold red]")
    for loc, message in error.diagnostics:
        err_console.print(f"  [yellow]{loc}[/yellow]: {message}")


def _summary(rows: List[ResultRow], csv_path: Path) -> None:
    table = Table(title=f"{len(rows)} rows → {csv_path}")
    for column in ("cell", "member", "estimate", "CI"):
        table.add_column(column)
    for row in rows[:40]:
        table.add_row(row.cell, row.member, f"{row.estimate:.6g}", f"[{row.ci_low:.4g}, {row.ci_high:.4g}]")
    if len(rows) > 40:
        table.add_row("…", "", "", "")
    console.print(table)


def _output_path(opts: CliOptions, config: ExperimentConfig) -> Path:
    if config.output:
        output = Path(config.output)
        return output if output.is_absolute() else opts.out_dir / output
    return opts.out_dir / f"{config.kind}.csv"


def _guarded(action) -> int:
    """Run ``action`` and translate every failure into its exit code."""
    try:
        action()
        return 0
    except ConfigSchemaError as e:
        _print_diagnostics(e)
        return e.exit_code
    except ValidationError as e:
        _print_diagnostics(ConfigSchemaError([(".".join(str(p) for p in err["loc"]) or "<model>", err["msg"])
                                              for err in e.errors()]))
        return ConfigSchemaError.exit_code
    except BlackBoxCommError as e:
        err_console.print(f"[bold red]❌ {type(e).__name__}:[/bold red] {e}")
        return e.exit_code
    except MemoryError as e:
        err_console.print(f"[bold red]❌ Out of memory:[/bold red] {e}")
        return 4
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        err_console.print(f"[bold red]❌ Internal error:[/bold red] {e}")
        return 1


def _execute(opts: CliOptions, config_path: str, expected_kind: Optional[str] = None) -> int:
    def action():
        config = load_config(config_path)
        if expected_kind is not None and config.kind != expected_kind:
            raise ConfigSchemaError([("experiment.kind", f"expected '{expected_kind}', got '{config.kind}'")],
                                    config_path)
        rows = ExperimentService(config, seed=opts.seed, workers=opts.workers, timing=opts.timing).run()
        csv_path = write_results(rows, _output_path(opts, config), timing=opts.timing)
        plots = plot_results(csv_path, csv_path.parent, opts.plot_format) if opts.plot else []
        if not opts.quiet:
            _summary(rows, csv_path)
            for path in plots:
                console.print(f"📈 {path}")

    return _guarded(action)


@click.group()
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the seed in the config.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="results", show_default=True,
              help="Directory for CSV and plot files.")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Parallel trial workers.")
@click.option("--quiet", is_flag=True, help="Only log warnings and errors.")
@click.option("--plot-format", type=click.Choice(["png", "pdf", "svg"]), default=None,
              help="Image format for plots.")
@click.option("--plot/--no-plot", default=True, show_default=True, help="Emit plots next to the CSV.")
@click.option("--timing", is_flag=True, help="Record per-cell wall time in the CSV.")
@click.pass_context
def cli(ctx, seed, out_dir, workers, quiet, plot_format, plot, timing):
    """Black-box communication workbench."""
    if quiet:
        set_level("WARNING")
    ctx.obj = CliOptions(seed=seed, out_dir=Path(out_dir), workers=workers, quiet=quiet,
                         plot_format=plot_format or settings.PLOT_FORMAT, plot=plot, timing=timing)


def _experiment_command(kind: str) -> click.Command:
    @click.command(name=kind, help=f"Run a '{kind}' experiment config.")
    @click.argument("config_path", type=click.Path(dir_okay=False))
    @click.pass_obj
    def command(opts: CliOptions, config_path: str):
        sys.exit(_execute(opts, config_path, expected_kind=kind))

    return command


for _kind in EXPERIMENT_KINDS:
    cli.add_command(_experiment_command(_kind))


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.pass_obj
def run(opts: CliOptions, config_path: str):
    """Run any experiment config."""
    sys.exit(_execute(opts, config_path))


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
def validate(config_path: str):
    """Schema-check a config without running it; silent when the config is valid."""
    sys.exit(_guarded(lambda: ExperimentService(load_config(config_path)).validate()))


@cli.command()
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def plot(opts: CliOptions, csv_path: str):
    """Redraw the plots of an existing result CSV."""
    def action():
        for path in plot_results(csv_path, opts.out_dir, opts.plot_format):
            console.print(f"📈 {path}")

    sys.exit(_guarded(action))


def main():
    """Console entry point"""
    cli(obj=None)


if __name__ == "__main__":
    main()
