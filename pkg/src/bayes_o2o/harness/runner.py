"""Execute a suite over its seeds and write outputs plus a manifest.

Layout under ``output_dir``::

    <suite>/...            per-seed CSV / JSONL / JSON files
    summary.csv            checkpoint means and stds (trace suites)
    curves.svg             rendered summary (trace suites)
    runs.jsonl             one line per (seed, agent) run with wall clock
    manifest.json          hashes, grouping and summary

Everything except the wall-clock fields is a pure function of the config.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..bandit import (AgentSpec, collect_offline_uniform, lcb_cumulative_study, make_counterexample_lcb,
                      make_counterexample_ucb, run_bandit_experiment, sample_bandit, ucb_first_pull_study)
from ..boorl import VARIANTS, AblationRow, BoorlConfig, ablation_csv, run_boorl
from ..bounds import bound_curve, check_regret_bound, curve_to_csv, regret_bound_experiment
from ..gridworld import Gridworld, collect_dataset
from ..linear_mdp import random_tabular_mdp
from ..rng import make_rng
from ..traces import RegretTrace
from .config import ExperimentConfig, _parse_agent
from .plotting import render_curves
from .summary import SummaryRow, checkpoints, summarize_files, summary_to_csv

METRIC_HEADER = ("metric", "value")


class RunError(RuntimeError):
    pass


@dataclass
class RunManifest:
    config_hash: str
    version: str
    suite: str
    seeds: list
    files: dict = field(default_factory=dict)
    traces: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    wall_clock: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


class _Writer:
    """Collects output files with their hashes; surfaces I/O errors with the path."""

    def __init__(self, root: Path):
        self.root = root
        self.files = {}

    def text(self, rel: str, content: str) -> str:
        path = self.root / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content)
        except OSError as exc:
            raise RunError(f"cannot write {path}: {exc.strerror or exc}") from exc
        self.files[rel] = hashlib.sha256(content.encode()).hexdigest()
        return rel


def metrics_csv(values: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_HEADER)
    for key, val in values.items():
        writer.writerow((key, repr(float(val))))
    return buf.getvalue()


def read_metrics(path: str | Path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != METRIC_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        return {k: float(v) for k, v in reader}


def _metric_summary(root: Path, files) -> dict:
    grouped = {}
    for rel in files:
        for key, val in read_metrics(root / rel).items():
            grouped.setdefault(key, []).append(val)
    out = {}
    for key, vals in grouped.items():
        arr = np.array(vals)
        out[key] = {"n": len(arr), "mean": float(arr.mean()),
                    "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0}
    return out


def compute_summary(root: str | Path, traces: list, metrics: list) -> dict:
    """Summary recomputed purely from the per-seed files under ``root``.

    ``traces`` is an ordered list of ``{"agent": name, "files": [...]}``.
    """
    root = Path(root)
    summary = {}
    if traces:
        groups = {g["agent"]: [root / rel for rel in g["files"]] for g in traces}
        summary["checkpoints"] = [asdict(r) for r in summarize_files(groups)]
    if metrics:
        summary["metrics"] = _metric_summary(root, metrics)
    return summary


# ------------------------------------------------------------------ suites

def trace_rows(length: int, stride: int):
    """Rows kept in a thinned trace: every ``stride``-th step plus the summary checkpoints."""
    if stride == 1:
        return None
    keep = np.union1d(np.arange(stride, length + 1, stride), checkpoints(length))
    return np.union1d(keep, [1, length])

def _run_bandit(cfg: ExperimentConfig, w: _Writer, clock: dict, traces: dict, metrics: list):
    p = cfg.params
    agents = []
    for tag in p["agents"]:
        kind, param = _parse_agent(tag)
        agents.append(AgentSpec(kind, k=p["k"], param=param if param is not None else 2.0,
                                prior_alpha=p["prior_alpha"], prior_beta=p["prior_beta"]))
    rows = trace_rows(p["horizon"], p["trace_stride"])
    for seed in cfg.seeds:
        bandit = sample_bandit(p["n_arms"], p["prior_alpha"], p["prior_beta"], make_rng(seed, "env"))
        offline = collect_offline_uniform(bandit, p["offline_pulls"], make_rng(seed, "offline"))
        for tag, agent in zip(p["agents"], agents):
            t0 = time.perf_counter()
            trace = run_bandit_experiment(bandit, offline, agent, p["horizon"], make_rng(seed, "online"), seed=seed)
            clock[f"{seed}/{tag}"] = time.perf_counter() - t0
            rel = w.text(f"bandit/{tag}_seed{seed}.csv", trace.to_csv(rows))
            traces.setdefault(tag, []).append(rel)


def _run_counterexample(cfg: ExperimentConfig, w: _Writer, clock: dict, traces: dict, metrics: list):
    p = cfg.params
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        ucb = ucb_first_pull_study(make_counterexample_ucb(p["epsilon"], p["n"]), p["ucb_draws"],
                                   make_rng(seed, "ucb"), p["k"])
        lcb = lcb_cumulative_study(make_counterexample_lcb(p["epsilon"], p["n"]), p["lcb_draws"],
                                   p["horizon"], make_rng(seed, "lcb"), p["k"])
        clock[f"{seed}/counterexample"] = time.perf_counter() - t0
        values = {
            "ucb.event_rate": ucb.event_rate,
            "ucb.mean_suboptimality": ucb.mean_regret,
            "ucb.std_error": ucb.std_error,
            "ucb.threshold": 0.1 * p["epsilon"],
            "lcb.event_rate": lcb.event_rate,
            "lcb.mean_regret": lcb.mean_regret,
            "lcb.std_error": lcb.std_error,
            "lcb.threshold": 0.1 * p["epsilon"] * p["horizon"],
        }
        metrics.append(w.text(f"counterexample/metrics_seed{seed}.csv", metrics_csv(values)))


def _run_linmdp(cfg: ExperimentConfig, w: _Writer, clock: dict, traces: dict, metrics: list):
    p = cfg.params
    for seed in cfg.seeds:
        mdp = random_tabular_mdp(p["n_states"], p["n_actions"], p["H"], make_rng(seed, "mdp"))
        w.text(f"linmdp/mdp_seed{seed}.json", mdp.to_json())
        t0 = time.perf_counter()
        run = regret_bound_experiment(mdp, p["episodes"], make_rng(seed, "run"), p["delta"], p["replays"],
                                      p["info_samples"], p["ridge"])
        clock[f"{seed}/ts"] = time.perf_counter() - t0
        online, offline = check_regret_bound(run.online), check_regret_bound(run.offline)
        traces.setdefault("ts", []).append(
            w.text(f"linmdp/ts_seed{seed}.csv", RegretTrace(online.regrets, seed, "ts").to_csv()))
        w.text(f"linmdp/bound_online_seed{seed}.jsonl", online.to_jsonl())
        w.text(f"linmdp/bound_offline_seed{seed}.jsonl", offline.to_jsonl())
        values = {
            "violation_fraction_online": online.violation_fraction,
            "violation_fraction_offline": offline.violation_fraction,
            "min_slack_online": float(online.slacks.min()),
            "min_slack_offline": float(offline.slacks.min()),
        }
        metrics.append(w.text(f"linmdp/metrics_seed{seed}.csv", metrics_csv(values)))


def _run_bounds(cfg: ExperimentConfig, w: _Writer, clock: dict, traces: dict, metrics: list):
    p = cfg.params
    t0 = time.perf_counter()
    rows = bound_curve(p["N"], p["T"], p["d"], p["H"], p["C_dagger"], p["c"], p["delta"])
    clock["table"] = time.perf_counter() - t0
    w.text("bounds/bound_curve.csv", curve_to_csv(rows))


def boorl_env(params: dict) -> Gridworld:
    return Gridworld.from_text(params["map"], H=params["horizon"], slip_prob=params["slip_prob"],
                               discount=params["discount"])


def boorl_base_config(params: dict) -> BoorlConfig:
    keys = ("L", "p", "lambda_bc", "temperature", "epsilon", "total_steps", "batch_size", "lr")
    return BoorlConfig(**{k: params[k] for k in keys})


def _run_boorl(cfg: ExperimentConfig, w: _Writer, clock: dict, traces: dict, metrics: list):
    p = cfg.params
    env = boorl_env(p)
    base = boorl_base_config(p)
    per_variant = {v: {"early": [], "final": [], "entropy": []} for v in p["variants"]}
    for seed in cfg.seeds:
        data = collect_dataset(env, p["dataset_size"], p["behavior_epsilon"], make_rng(seed, "offline"))
        w.text(f"boorl/offline_seed{seed}.csv", data.to_csv())
        values = {}
        for variant in p["variants"]:
            t0 = time.perf_counter()
            run = run_boorl(env, data, replace(base, **VARIANTS[variant]), make_rng(seed, "boorl", variant))
            clock[f"{seed}/{variant}"] = time.perf_counter() - t0
            run.trace.seed, run.trace.agent_tag = seed, variant
            traces.setdefault(variant, []).append(w.text(f"boorl/{variant}_seed{seed}.csv", run.trace.to_csv()))
            w.text(f"boorl/{variant}_episodes_seed{seed}.jsonl", run.episodes_jsonl())
            values[f"{variant}.early_regret"] = run.early_regret()
            values[f"{variant}.final_return"] = run.final_return
            values[f"{variant}.selection_entropy"] = run.selection_entropy
            per_variant[variant]["early"].append(run.early_regret())
            per_variant[variant]["final"].append(run.final_return)
            per_variant[variant]["entropy"].append(run.selection_entropy)
        metrics.append(w.text(f"boorl/metrics_seed{seed}.csv", metrics_csv(values)))
    ddof = 1 if len(cfg.seeds) > 1 else 0
    rows = []
    for variant, vals in per_variant.items():
        e, f, h = (np.array(vals[k]) for k in ("early", "final", "entropy"))
        rows.append(AblationRow(variant, float(e.mean()), float(e.std(ddof=ddof)), float(f.mean()),
                                float(f.std(ddof=ddof)), float(h.mean())))
    w.text("boorl/comparison.csv", ablation_csv(rows))


_SUITES = {
    "bandit": _run_bandit,
    "counterexample": _run_counterexample,
    "linmdp": _run_linmdp,
    "bounds": _run_bounds,
    "boorl": _run_boorl,
}

_YLABEL = {"bandit": "cumulative regret", "linmdp": "cumulative regret",
           "boorl": "cumulative regret (booked per episode)"}


def run_suite(cfg: ExperimentConfig, output_dir: str | Path | None = None) -> RunManifest:
    root = Path(output_dir if output_dir is not None else cfg.output_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RunError(f"cannot create {root}: {exc.strerror or exc}") from exc
    w = _Writer(root)
    clock, traces, metrics = {}, {}, []
    _SUITES[cfg.suite](cfg, w, clock, traces, metrics)

    traces = [{"agent": agent, "files": rels} for agent, rels in traces.items()]
    summary = compute_summary(root, traces, metrics)
    if "checkpoints" in summary:
        rows = [SummaryRow(**r) for r in summary["checkpoints"]]
        w.text("summary.csv", summary_to_csv(rows))
        w.text("curves.svg", render_curves(rows, title=cfg.preset or cfg.suite, ylabel=_YLABEL[cfg.suite]))

    manifest = RunManifest(cfg.digest(), __version__, cfg.suite, list(cfg.seeds), dict(w.files), traces,
                           metrics, clock, summary)
    lines = [json.dumps({"run": key, "seconds": sec}) for key, sec in clock.items()]
    (root / "runs.jsonl").write_text("\n".join(lines) + "\n")
    (root / "config.json").write_text(cfg.to_json() + "\n")
    (root / "manifest.json").write_text(manifest.to_json())
    return manifest


def check_manifest(path: str | Path) -> list[str]:
    """Problems found when re-reading a manifest's files; empty means intact."""
    path = Path(path)
    root = path.parent
    m = RunManifest.load(path)
    problems = []
    for rel, digest in m.files.items():
        f = root / rel
        if not f.exists():
            problems.append(f"{rel}: missing")
        elif hashlib.sha256(f.read_bytes()).hexdigest() != digest:
            problems.append(f"{rel}: hash mismatch")
    if not problems and compute_summary(root, m.traces, m.metrics) != m.summary:
        problems.append("summary does not match per-seed files")
    return problems
