"""SVG regret curves with a shaded one-std band per agent."""
from __future__ import annotations

import io
from collections import OrderedDict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .summary import SummaryRow  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.2),
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "svg.fonttype": "none",
    "svg.hashsalt": "bayes-o2o",
}


def curve_figure(rows: Sequence[SummaryRow], title: str = "", ylabel: str = "cumulative regret",
                 xlabel: str = "step", logx: bool = True):
    """Matplotlib figure with one line and one-std band per agent (call under the style)."""
    if not rows:
        raise ValueError("nothing to plot")
    groups = OrderedDict()
    for r in rows:
        groups.setdefault(r.agent, []).append(r)
    fig, ax = plt.subplots()
    for agent, group in groups.items():
        x = [r.step for r in group]
        m = [r.mean for r in group]
        lo = [r.mean - r.std for r in group]
        hi = [r.mean + r.std for r in group]
        (line,) = ax.plot(x, m, label=agent, lw=1.4, marker="o" if len(x) == 1 else None)
        ax.fill_between(x, lo, hi, color=line.get_color(), alpha=0.2, lw=0)
    if logx and all(r.step > 0 for r in rows) and len({r.step for r in rows}) > 1:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left")
    fig.tight_layout()
    return fig


def render_curves(rows: Sequence[SummaryRow], style: dict | None = None, **kwargs) -> str:
    """Return a standalone SVG document; identical rows give identical bytes."""
    with plt.rc_context(dict(STYLE, **(style or {}))):
        fig = curve_figure(rows, **kwargs)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def write_curves(rows: Sequence[SummaryRow], path: str | Path, **kwargs) -> Path:
    path = Path(path)
    path.write_text(render_curves(rows, **kwargs))
    return path
