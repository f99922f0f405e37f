"""Seed-aggregated cumulative curves at log-spaced checkpoints."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..traces import RegretTrace, read_cumulative

SUMMARY_HEADER = ("agent", "step", "mean", "std")


@dataclass(frozen=True)
class SummaryRow:
    agent: str
    step: int
    mean: float
    std: float


def checkpoints(length: int, count: int = 50) -> np.ndarray:
    """Up to ``count`` distinct 1-based steps, log-spaced from 1 to ``length``."""
    if length < 1:
        raise ValueError("length must be positive")
    return np.unique(np.rint(np.geomspace(1, length, count)).astype(int))


def summarize_curves(curves: Sequence[np.ndarray], agent: str, count: int = 50) -> list[SummaryRow]:
    """Mean and sample std across ``curves`` (one cumulative series per seed)."""
    if len(curves) == 0:
        raise ValueError("need at least one curve")
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise ValueError(f"{agent}: curves have different lengths {sorted(lengths)}")
    stacked = np.vstack([np.asarray(c, dtype=float) for c in curves])
    steps = checkpoints(stacked.shape[1], count)
    return _rows(agent, steps, stacked[:, steps - 1])


def _rows(agent: str, steps: np.ndarray, cols: np.ndarray) -> list[SummaryRow]:
    mean = cols.mean(axis=0)
    std = cols.std(axis=0, ddof=1) if cols.shape[0] > 1 else np.zeros(len(steps))
    return [SummaryRow(agent, int(s), float(m), float(sd)) for s, m, sd in zip(steps, mean, std)]


def summarize(traces: Mapping[str, Sequence[RegretTrace]], count: int = 50) -> list[SummaryRow]:
    rows = []
    for agent, group in traces.items():
        rows.extend(summarize_curves([t.cumulative for t in group], agent, count))
    return rows


def summarize_files(groups: Mapping[str, Sequence[str | Path]], count: int = 50) -> list[SummaryRow]:
    """Same table as :func:`summarize`, read from (possibly thinned) trace CSVs."""
    rows = []
    for agent, paths in groups.items():
        if not paths:
            raise ValueError(f"{agent}: no traces")
        loaded = [read_cumulative(p) for p in paths]
        lengths = {int(s[-1]) for s, _ in loaded}
        if len(lengths) != 1:
            raise ValueError(f"{agent}: traces have different lengths {sorted(lengths)}")
        steps = checkpoints(lengths.pop(), count)
        cols = np.empty((len(loaded), len(steps)))
        for i, ((have, cum), path) in enumerate(zip(loaded, paths)):
            pos = np.searchsorted(have, steps)
            if np.any(pos >= len(have)) or np.any(have[np.minimum(pos, len(have) - 1)] != steps):
                raise ValueError(f"{path}: checkpoint rows missing")
            cols[i] = cum[pos]
        rows.extend(_rows(agent, steps, cols))
    return rows


def summary_to_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for r in rows:
        writer.writerow((r.agent, r.step, repr(r.mean), repr(r.std)))
    return buf.getvalue()


def read_summary(path: str | Path) -> list[SummaryRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        return [SummaryRow(a, int(s), float(m), float(sd)) for a, s, m, sd in reader]
