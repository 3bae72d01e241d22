"""
Run export service.
Writes run records in the versioned CSV schema, reads them back and summarizes them.
"""

import logging
import math
import re
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd

from models.run import RunRecord, RunSummary

logger = logging.getLogger(__name__)

CSV_VERSION = "deformation-run-csv v1"
TAIL_WINDOW = 100
TAIL_SKIP = 0.1
STEADY_STATE_FRACTION = 0.1


def csv_columns(k: int) -> List[str]:
    """Column order of the v1 schema for k manipulation points."""
    return (
        ["tick", "t", "e_s_norm", "e_x"]
        + [f"e_d_{i}" for i in range(3 * k)]
        + ["e_d_norm"]
        + [f"v_{i}" for i in range(3 * k)]
        + ["theta_min", "theta_mean", "theta_max", "lyapunov", "jte_norm", "point_error", "active_samples"]
    )


def record_frame(record: RunRecord) -> pd.DataFrame:
    rows = []
    for row in record.rows:
        flat = row.model_dump(exclude={"e_d", "v"})
        flat.update({f"e_d_{i}": value for i, value in enumerate(row.e_d)})
        flat.update({f"v_{i}": value for i, value in enumerate(row.v)})
        rows.append(flat)
    return pd.DataFrame(rows, columns=csv_columns(record.k))


def export_csv(record: RunRecord, path: Union[str, Path]) -> Path:
    """Comment line with the schema version, then one row per tick (17 significant digits)."""
    path = Path(path)
    with path.open("w", newline="") as handle:
        handle.write(f"# {CSV_VERSION} k={record.k}\n")
        record_frame(record).to_csv(handle, index=False, float_format="%.17g")
    logger.info(f"Wrote {len(record.rows)} rows to {path}")
    return path


def read_csv_record(path: Union[str, Path]) -> Tuple[int, pd.DataFrame]:
    """(k, rows) from a v1 CSV file."""
    path = Path(path)
    with path.open() as handle:
        header = handle.readline().strip()
    match = re.fullmatch(rf"# {re.escape(CSV_VERSION)} k=(\d+)", header)
    if match is None:
        raise ValueError(f"{path} is not a {CSV_VERSION} file")
    return int(match.group(1)), pd.read_csv(path, skiprows=1)


def monotone_tail(values: np.ndarray, window: int = TAIL_WINDOW, skip: float = TAIL_SKIP) -> bool:
    """Whether the moving average of a series is non-increasing after the first ``skip`` fraction."""
    n = len(values)
    if n < 2:
        return True
    window = min(window, n)
    average = pd.Series(values).rolling(window).mean()
    tail = average.iloc[max(math.ceil(skip * n), window - 1):].to_numpy()
    if tail.size < 2:
        return True
    slack = 1e-12 * max(float(np.abs(tail).max()), 1e-300)
    return bool(np.all(np.diff(tail) <= slack))


def summarize(record: RunRecord) -> RunSummary:
    summary = RunSummary(
        scenario=record.scenario, controller=record.controller, status=record.status, ticks=len(record.rows)
    )
    if not record.rows:
        return summary
    frame = record_frame(record)
    first, last = record.rows[0], record.rows[-1]
    e_s = frame["e_s_norm"].to_numpy()
    stop_ratio = record.diagnostics.get("stop_ratio", 1e-3)
    reached = np.flatnonzero(e_s <= stop_ratio * e_s[0])

    steady = frame.iloc[-max(1, math.ceil(STEADY_STATE_FRACTION * len(frame))):]
    e_d = steady[[f"e_d_{i}" for i in range(3 * record.k)]].abs().to_numpy()

    summary.initial_e_s_norm = first.e_s_norm
    summary.final_e_s_norm = last.e_s_norm
    summary.final_e_x = last.e_x
    summary.initial_e_d_norm = first.e_d_norm
    summary.final_e_d_norm = last.e_d_norm
    summary.steady_state_e_d_max = float(e_d.max())
    summary.final_point_error = last.point_error
    summary.steady_state_point_error = float(steady["point_error"].mean())
    summary.ticks_to_threshold = int(frame["tick"].iloc[reached[0]]) if reached.size else None
    if first.jte_norm and last.jte_norm is not None:
        summary.jte_ratio = last.jte_norm / first.jte_norm
    lyapunov = frame["lyapunov"].dropna()
    summary.max_lyapunov = float(lyapunov.max()) if not lyapunov.empty else None
    summary.monotone_tail = monotone_tail(e_s)
    return summary
