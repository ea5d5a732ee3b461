"""Result CSV writing and reading.

The column set is fixed; ``extra`` holds sorted-key JSON so identical runs
produce byte-identical files.
"""

import logging
import math
from pathlib import Path
from typing import List, Union

import orjson
import pandas as pd

from blackbox_comm.models.reports import ResultRow

logger = logging.getLogger(__name__)

COLUMNS = [
    "experiment", "cell", "member", "n", "rate", "param",
    "estimate", "ci_low", "ci_high", "trials", "extra", "wall_time",
]


def _clean(value):
    """Non-finite floats become JSON null; numpy scalars become Python scalars."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def encode_extra(extra: dict) -> str:
    return orjson.dumps(_clean(extra), option=orjson.OPT_SORT_KEYS).decode()


def _number(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ("inf" if value > 0 else "-inf")
    return str(value)


def rows_to_frame(rows: List[ResultRow], timing: bool = False) -> pd.DataFrame:
    """One row per cell, every value already rendered as text."""
    records = []
    for row in rows:
        records.append({
            "experiment": row.experiment,
            "cell": row.cell,
            "member": row.member,
            "n": _number(row.n),
            "rate": _number(row.rate),
            "param": _number(row.param),
            "estimate": _number(row.estimate),
            "ci_low": _number(row.ci_low),
            "ci_high": _number(row.ci_high),
            "trials": _number(row.trials),
            "extra": encode_extra(row.extra),
            "wall_time": _number(row.wall_time) if timing else "",
        })
    return pd.DataFrame.from_records(records, columns=COLUMNS)


def write_results(rows: List[ResultRow], path: Union[str, Path], timing: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = rows_to_frame(rows, timing)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_results(path: Union[str, Path]) -> pd.DataFrame:
    """Load a result CSV with numeric columns parsed and ``extra`` decoded."""
    frame = pd.read_csv(path, dtype={"experiment": str, "cell": str, "member": str}, keep_default_na=False,
                        na_values={c: [""] for c in ("n", "rate", "param", "trials", "wall_time")})
    for column in ("n", "rate", "param", "estimate", "ci_low", "ci_high", "trials", "wall_time"):
        frame[column] = pd.to_numeric(frame[column], errors="coerce")
    frame["extra"] = frame["extra"].map(lambda text: orjson.loads(text) if text else {})
    return frame
