"""Reduce a trace CSV to a handful of numbers: fitted rate, consensus floor, divergence."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..dnewton import CONSENSUS_FLOOR, TRACE_HEADER

NUMERICAL_FLOOR = 1e-10
TAIL_FRACTION = 0.2


class SummaryError(ValueError):
    """Malformed trace file."""


@dataclass(frozen=True)
class TraceSummary:
    rounds: int
    final_max_err: float
    final_consensus_residual: float
    fitted_ratio: float
    consensus_floor: float
    consensus_above_floor: bool
    divergence_round: Optional[int]
    first_round_below_1e6: Optional[int]

    def as_row(self) -> dict:
        return asdict(self)


def read_trace(path):
    """Load a trace CSV into ``(ks, arrays)`` where each array has shape (rounds, nodes)."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SummaryError(f"cannot read {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise SummaryError(f"{path}: header must be {','.join(TRACE_HEADER)}")
    body = rows[1:]
    if not body:
        raise SummaryError(f"{path}: no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise SummaryError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(TRACE_HEADER):
        raise SummaryError(f"{path}: every row needs {len(TRACE_HEADER)} fields")
    nodes = int(data[:, 1].max()) + 1
    if data.shape[0] % nodes:
        raise SummaryError(f"{path}: {data.shape[0]} rows do not split into rounds of {nodes} nodes")
    data = data.reshape(-1, nodes, len(TRACE_HEADER))
    if np.any(data[:, :, 1] != np.arange(nodes)) or np.any(data[:, :, 0] != data[:, :1, 0]):
        raise SummaryError(f"{path}: rows must be ordered by round, then node")
    ks = data[:, 0, 0].astype(int)
    return ks, {name: data[:, :, j] for j, name in enumerate(TRACE_HEADER) if name not in ("k", "i")}


def fitted_ratio(series, tail: float = TAIL_FRACTION, floor: float = NUMERICAL_FLOOR) -> float:
    """Least-squares geometric ratio of ``series`` over its last ``tail`` fraction.

    The series is first cut where it reaches ``floor`` (roundoff plateau)
    or stops being finite; a constant series gives 1.
    """
    e = np.asarray(series, dtype=float)
    good = np.isfinite(e) & (e > 0)
    stop = e.size if good.all() else int(np.argmin(good))
    e = e[:stop]
    below = np.flatnonzero(e < floor)
    if below.size:
        e = e[: below[0] + 1]
    if e.size < 2:
        return float("nan")
    n = max(2, int(np.ceil(tail * e.size)))
    y = np.log(e[-n:])
    k = np.arange(n, dtype=float)
    slope = np.polyfit(k, y, 1)[0]
    return float(np.exp(slope))


def summarize_arrays(ks, arrays, consensus_floor: float = CONSENSUS_FLOOR) -> TraceSummary:
    err = arrays["err"]
    cres = arrays["consensus_residual"]
    diverged = arrays["diverged"].any(axis=1)
    max_err = err.max(axis=1)
    div_round = int(ks[np.argmax(diverged)]) if diverged.any() else None
    ok = ~diverged
    max_ok = max_err[ok]
    cmax = cres[ok].max(axis=1)
    n = max(1, int(np.ceil(TAIL_FRACTION * cmax.size)))
    cfloor = float(np.median(cmax[-n:])) if cmax.size else float("nan")
    hit = np.flatnonzero(max_ok < 1e-6)
    return TraceSummary(
        rounds=int(ok.sum()),
        final_max_err=float(max_ok[-1]) if max_ok.size else float("nan"),
        final_consensus_residual=float(cmax[-1]) if cmax.size else float("nan"),
        fitted_ratio=fitted_ratio(max_ok),
        consensus_floor=cfloor,
        consensus_above_floor=bool(cfloor > consensus_floor),
        divergence_round=div_round,
        first_round_below_1e6=int(ks[ok][hit[0]]) if hit.size else None,
    )


def summarize(path, consensus_floor: float = CONSENSUS_FLOOR) -> TraceSummary:
    """Summary record of a trace CSV; see :class:`TraceSummary`."""
    ks, arrays = read_trace(path)
    return summarize_arrays(ks, arrays, consensus_floor)


def summarize_trace(trace, consensus_floor: float = CONSENSUS_FLOOR) -> TraceSummary:
    """Same as :func:`summarize` for an in-memory :class:`~distnewton.dnewton.Trace`."""
    arrays = {name: getattr(trace, name) for name in TRACE_HEADER[2:]}
    return summarize_arrays(np.asarray(trace.ks), arrays, consensus_floor)
