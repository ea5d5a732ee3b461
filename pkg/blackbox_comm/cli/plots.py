"""Plots rebuilt from a result CSV alone, so they can be redrawn offline."""

import logging
from pathlib import Path
from typing import List, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from blackbox_comm.cli.results import read_results  # noqa: E402
from blackbox_comm.core.config import settings  # noqa: E402

logger = logging.getLogger(__name__)

# Experiments whose rows trend over the blocklength n.
_ERROR_VS_N = ("source", "direct", "reliability", "separation", "equivalence", "multiuser")


def _save(fig, out_dir: Path, stem: str, fmt: str) -> Path:
    path = out_dir / f"{stem}.{fmt}"
    fig.tight_layout()
    fig.savefig(path, format=fmt)
    plt.close(fig)
    logger.info(f"Saved plot {path}")
    return path


def plot_rd_curve(frame: pd.DataFrame, out_dir: Path, fmt: str) -> Optional[Path]:
    rows = frame[frame["experiment"] == "rd"].sort_values("param")
    if rows.empty:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rows["param"], rows["estimate"], marker="o")
    ax.set_xlabel("distortion D")
    ax.set_ylabel("R(D) [bits]")
    ax.set_title("Rate-distortion curve")
    ax.grid(True, alpha=0.3)
    return _save(fig, out_dir, "rd_curve", fmt)


def plot_exponent(frame: pd.DataFrame, out_dir: Path, fmt: str) -> Optional[Path]:
    rows = frame[frame["experiment"] == "exponent"].sort_values("param")
    if rows.empty:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rows["param"], rows["estimate"], marker="o", label="Sanov exponent")
    bound = rows["extra"].map(lambda extra: extra.get("mutual_information_bound"))
    if bound.notna().any():
        ax.plot(rows["param"], bound.astype(float), marker="x", linestyle="--", label="mutual information bound")
    ax.set_xlabel("typicality slack eps")
    ax.set_ylabel("exponent [bits]")
    ax.set_title("Impostor exponent vs eps")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, out_dir, "exponent_vs_eps", fmt)


def plot_error_vs_n(frame: pd.DataFrame, out_dir: Path, fmt: str) -> Optional[Path]:
    rows = frame[frame["experiment"].isin(_ERROR_VS_N) & frame["n"].notna()
                 & ~frame["cell"].str.contains("behavioral|induction|independence")]
    if rows.empty:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    floor = 0.5 / max(float(rows["trials"].fillna(1).max()), 1.0)
    series = rows.assign(series=rows["cell"].str.replace(r"(^|:)n=\d+$", "", regex=True))
    for (experiment, name), group in series.groupby(["experiment", "series"], sort=True):
        group = group.sort_values("n")
        estimate = group["estimate"].clip(lower=floor)
        errors = [estimate - group["ci_low"].clip(lower=floor), group["ci_high"] - estimate]
        label = f"{experiment}: {name}" if name else experiment
        ax.errorbar(group["n"], estimate, yerr=[e.clip(lower=0) for e in errors], marker="o", capsize=3,
                    label=label)
    ax.set_yscale("log")
    ax.set_xlabel("blocklength n")
    ax.set_ylabel("error / excess-distortion probability")
    ax.set_title("Error vs blocklength")
    ax.legend(fontsize="small")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, out_dir, "error_vs_n", fmt)


def plot_results(csv_path: Union[str, Path], out_dir: Union[str, Path], fmt: Optional[str] = None) -> List[Path]:
    """Write every plot that applies to the rows in ``csv_path``."""
    fmt = fmt or settings.PLOT_FORMAT
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = read_results(csv_path)
    written = [plot(frame, out_dir, fmt) for plot in (plot_rd_curve, plot_exponent, plot_error_vs_n)]
    return [path for path in written if path is not None]
