"""Regret traces shared by the bandit, linear-MDP and ensemble runners."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_HEADER = ("step", "instantaneous", "cumulative")


@dataclass
class RegretTrace:
    """Per-step regret of one run, with its provenance."""

    instantaneous: np.ndarray
    seed: int | None = None
    agent_tag: str = ""
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        self.instantaneous = np.asarray(self.instantaneous, dtype=float)
        if self.instantaneous.ndim != 1:
            raise ValueError("instantaneous regret must be one-dimensional")
        if np.any(self.instantaneous < 0):
            raise ValueError("instantaneous regret must be non-negative")
        self.cumulative = np.cumsum(self.instantaneous)

    def __len__(self):
        return len(self.instantaneous)

    def to_csv(self, steps=None) -> str:
        """CSV text; ``steps`` (1-based) keeps only those rows."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        idx = range(len(self)) if steps is None else np.asarray(steps, dtype=int) - 1
        for i in idx:
            writer.writerow((int(i) + 1, repr(float(self.instantaneous[i])), repr(float(self.cumulative[i]))))
        return buf.getvalue()

    def write_csv(self, path: str | Path, steps=None) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(steps))
        return path

    @classmethod
    def read_csv(cls, path: str | Path, seed: int | None = None, agent_tag: str = "") -> "RegretTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header!r}")
            rows = [(int(row[0]), float(row[1])) for row in reader]
        if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
            raise ValueError(f"{path}: rows are not the consecutive steps 1..n (thinned trace?)")
        inst = [r[1] for r in rows]
        return cls(np.array(inst), seed=seed, agent_tag=agent_tag)


def read_cumulative(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """``(steps, cumulative)`` columns of a trace CSV, which may be thinned."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = [(int(r[0]), float(r[2])) for r in reader]
    if not rows:
        raise ValueError(f"{path}: no rows")
    steps, cum = zip(*rows)
    return np.array(steps), np.array(cum)
