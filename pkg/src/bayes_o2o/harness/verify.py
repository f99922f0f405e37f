"""Executable acceptance checks with measured values and thresholds.

Each check returns a :class:`CheckResult`; :func:`run_checks` prints one
line per check. Checks are grouped by suite so ``verify bandit`` runs only
the bandit ones.
"""
from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from ..bandit import (AgentSpec, collect_offline_uniform, lcb_cumulative_study, make_counterexample_lcb,
                      make_counterexample_ucb, run_bandit_experiment, sample_bandit, ucb_first_pull_study)
from ..boorl import (VARIANTS, EnsembleMember, ReplayMixer, build_masked_dataset, run_boorl, selection_probs,
                     softmax_select)
from ..bounds import (BoundInputs, bound_eval, check_regret_bound, coverage_coefficient, point_mass,
                      regret_bound_experiment)
from ..gridworld import collect_dataset
from ..linear_mdp import info_gain, make_tabular_linear, random_tabular_mdp
from ..rng import make_rng
from .config import DEFAULTS, PRESETS, from_preset
from .runner import boorl_base_config, boorl_env, run_suite


@dataclass(frozen=True)
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:>2} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _one_sided(diffs: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    """Mean of paired differences and the half-width of a one-sided t interval."""
    n = len(diffs)
    se = diffs.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return float(diffs.mean()), float(stats.t.ppf(level, n - 1) * se) if n > 1 else 0.0


# ------------------------------------------------------------ counterexamples

def check_ucb_first_pull(seed: int = 0) -> CheckResult:
    p = DEFAULTS["counterexample"]
    st = ucb_first_pull_study(make_counterexample_ucb(p["epsilon"], p["n"]), p["ucb_draws"],
                              make_rng(seed, "ucb"), p["k"])
    thr = 0.1 * p["epsilon"]
    ok = st.event_rate >= 0.36 and st.mean_regret >= thr - 3 * st.std_error
    return CheckResult(1, "ucb_first_pull", ok,
                       f"P(arm 2 logged once)={st.event_rate:.4f} (>= 0.36); "
                       f"E[subopt]={st.mean_regret:.5f} se={st.std_error:.2e} (>= {thr:g} - 3se)")


def check_lcb_cumulative(seed: int = 0) -> CheckResult:
    p = DEFAULTS["counterexample"]
    st = lcb_cumulative_study(make_counterexample_lcb(p["epsilon"], p["n"]), p["lcb_draws"], p["horizon"],
                              make_rng(seed, "lcb"), p["k"])
    thr = 0.1 * p["epsilon"] * p["horizon"]
    ok = st.mean_regret >= thr - 3 * st.std_error
    return CheckResult(2, "lcb_cumulative", ok,
                       f"E[regret]={st.mean_regret:.3f} se={st.std_error:.3f} (>= {thr:g} - 3se)")


# ------------------------------------------------------------------ bandits

_BANDIT_CACHE = {}


def bandit_dilemma_stats(seeds=tuple(range(100))) -> dict:
    """Cumulative regret at t=1e3, t=T/2 and t=T per agent and seed."""
    key = tuple(seeds)
    if key in _BANDIT_CACHE:
        return _BANDIT_CACHE[key]
    p = DEFAULTS["bandit"]
    T = p["horizon"]
    agents = {"ucb": AgentSpec("ucb"), "lcb": AgentSpec("lcb"), "ts": AgentSpec("ts")}
    for tag in p["agents"]:
        if tag[:4] in ("soft", "hard"):
            agents[tag] = AgentSpec(tag[:4], param=float(tag[4:]))
    out = {tag: np.zeros((len(key), 3)) for tag in agents}
    for i, seed in enumerate(key):
        bandit = sample_bandit(p["n_arms"], rng=make_rng(seed, "env"))
        offline = collect_offline_uniform(bandit, p["offline_pulls"], make_rng(seed, "offline"))
        for tag, agent in agents.items():
            cum = run_bandit_experiment(bandit, offline, agent, T, make_rng(seed, "online")).cumulative
            out[tag][i] = cum[999], cum[T // 2 - 1], cum[T - 1]
    _BANDIT_CACHE[key] = out
    return out


def check_bandit_dilemma(seeds=tuple(range(100))) -> CheckResult:
    s = bandit_dilemma_stats(seeds)
    T = DEFAULTS["bandit"]["horizon"]
    m = {k: v.mean(axis=0) for k, v in s.items()}
    slope = {k: (m[k][2] - m[k][1]) / (T - T // 2) for k in ("lcb", "ts")}
    a = m["ts"][0] <= 1.5 * m["lcb"][0]
    b = m["ts"][2] <= 1.5 * m["ucb"][2]
    c = slope["lcb"] >= 5 * slope["ts"]
    return CheckResult(3, "bandit_dilemma", a and b and c,
                       f"(a) TS@1e3={m['ts'][0]:.2f} vs 1.5*LCB={1.5 * m['lcb'][0]:.2f}; "
                       f"(b) TS@T={m['ts'][2]:.2f} vs 1.5*UCB={1.5 * m['ucb'][2]:.2f}; "
                       f"(c) LCB slope={slope['lcb']:.2e} vs 5*TS={5 * slope['ts']:.2e}")


def check_switching(seeds=tuple(range(100))) -> CheckResult:
    s = bandit_dilemma_stats(seeds)
    ts_final = s["ts"][:, 2]
    parts, ok = [], True
    for tag in s:
        if tag[:4] not in ("soft", "hard"):
            continue
        mean, half = _one_sided(s[tag][:, 2] - ts_final)
        ok &= mean - half > 0
        parts.append(f"{tag} {mean:.1f}-{half:.1f}")
    return CheckResult(4, "switching_vs_ts", ok, "final regret minus TS, lower 95% bound > 0: " + ", ".join(parts))


# -------------------------------------------------------------- linear MDP

def check_info_gain_identity(streams: int = 100, seed: int = 0) -> CheckResult:
    rng = make_rng(seed, "info-gain")
    worst_sum, worst_step = 0.0, 0.0
    for _ in range(streams):
        d = int(rng.integers(1, 11))
        length = int(rng.integers(1, 501))
        root = rng.standard_normal((d, d))
        lam = root @ root.T + float(rng.uniform(0.5, 2.0)) * np.eye(d)
        start = np.linalg.slogdet(lam)[1]
        total = 0.0
        for phi in rng.standard_normal((length, d)) * rng.uniform(0.1, 2.0):
            g = info_gain(phi, lam)
            nxt = lam + np.outer(phi, phi)
            # det(nxt) / det(lam) as one near-identity determinant, no log-det cancellation
            ref = 0.5 * np.linalg.slogdet(np.linalg.solve(lam, nxt))[1]
            worst_step = max(worst_step, abs(g - ref))
            total += g
            lam = nxt
        ref_total = 0.5 * (np.linalg.slogdet(lam)[1] - start)
        worst_sum = max(worst_sum, abs(total - ref_total) / abs(ref_total))
    ok = worst_sum <= 1e-9 and worst_step <= 1e-9
    return CheckResult(5, "info_gain_log_det", ok,
                       f"max rel err of summed gains={worst_sum:.2e} (<= 1e-9); "
                       f"max abs err per step={worst_step:.2e} (<= 1e-9)")


def check_regret_bound_validity(seeds=(0, 1, 2)) -> CheckResult:
    p = DEFAULTS["linmdp"]
    slack, viol = [], []
    for seed in seeds:
        mdp = random_tabular_mdp(p["n_states"], p["n_actions"], p["H"], make_rng(seed, "mdp"))
        run = regret_bound_experiment(mdp, p["episodes"], make_rng(seed, "run"), p["delta"], p["replays"],
                                      p["info_samples"], p["ridge"])
        rep = check_regret_bound(run.online)
        viol.append(rep.slacks < 0)
        slack.append(rep.slacks.min())
    frac = float(np.concatenate(viol).mean())
    return CheckResult(6, "regret_bound_validity", frac <= 0.05,
                       f"violating episodes {frac:.4f} over {len(seeds)} MDPs (<= 0.05); min slack {min(slack):.3f}")


def check_bound_shape() -> CheckResult:
    p = DEFAULTS["bounds"]
    N = np.array(p["N"])
    T = np.array(p["T"])
    iota_h = float(T.max())

    def f(n, t):
        return bound_eval(BoundInputs(n, t, p["d"], p["H"], p["C_dagger"], p["c"], p["delta"], iota_h))

    grid = np.array([[f(n, t) for t in T] for n in N])
    dT = np.diff(grid, axis=1)
    slopes = dT / np.diff(T)
    increasing = bool(np.all(dT > 0))
    concave = bool(np.all(np.diff(slopes, axis=1) <= 0))
    decreasing_n = bool(np.all(np.diff(grid, axis=0) < 0))
    scale = BoundInputs(0, 1, p["d"], p["H"], p["C_dagger"], p["c"], p["delta"], iota_h).scale
    zero_offline = bool(np.all(grid[N == 0] <= 2 * scale * np.sqrt(T)))
    pos = N > 0
    one_step = np.array([f(n, 1.0) for n in N[pos]])
    small_t = bool(np.all(one_step <= scale / (2 * np.sqrt(N[pos] / p["C_dagger"]))))
    ok = increasing and concave and decreasing_n and zero_offline and small_t
    return CheckResult(7, "bound_shape", ok,
                       f"increasing in T={increasing}, concave in T={concave}, decreasing in N={decreasing_n}, "
                       f"N=0 cap={zero_offline}, T=1 cap={small_t} on {len(N)}x{len(T)} grid")


def _visitation_oracle(P, R, H, S, A, s0):
    """Plain-loop backward induction and forward occupancy of the optimal policy."""
    V = [0.0] * S
    pi = [[0] * S for _ in range(H)]
    for h in reversed(range(H)):
        newV = [0.0] * S
        for s in range(S):
            best, arg = -1.0, 0
            for a in range(A):
                q = R[h][s][a] + sum(P[h][s][a][t] * V[t] for t in range(S))
                if q > best:
                    best, arg = q, a
            newV[s], pi[h][s] = best, arg
        V = newV
    occ = np.zeros((H, S, A))
    dist = [0.0] * S
    dist[s0] = 1.0
    for h in range(H):
        nxt = [0.0] * S
        for s in range(S):
            a = pi[h][s]
            occ[h, s, a] += dist[s]
            for t in range(S):
                nxt[t] += dist[s] * P[h][s][a][t]
        dist = nxt
    return occ


def check_coverage_oracle(n_mdps: int = 50, seed: int = 0) -> CheckResult:
    rng = make_rng(seed, "coverage")
    worst, worst_self = 0.0, 0.0
    for _ in range(n_mdps):
        S, A, H = int(rng.integers(2, 6)), int(rng.integers(2, 4)), int(rng.integers(1, 5))
        P = rng.dirichlet(np.ones(S), size=(H, S, A))
        R = rng.uniform(0, 1, size=(H, S, A))
        mdp = make_tabular_linear(S, A, H, P, R, 0)
        rho = rng.dirichlet(np.ones(S * A), size=H).reshape(H, S, A)
        occ = _visitation_oracle(P.tolist(), R.tolist(), H, S, A, 0)
        oracle = max(float((occ[h] / rho[h]).max()) for h in range(H))
        got = coverage_coefficient(mdp, rho, point_mass(mdp), 1).value
        worst = max(worst, abs(got - oracle) / oracle)
        own = coverage_coefficient(mdp, occ, point_mass(mdp), 1).value
        worst_self = max(worst_self, abs(own - 1.0))
    ok = worst <= 1e-8 and worst_self <= 1e-10
    return CheckResult(8, "coverage_oracle", ok,
                       f"max rel err vs visitation ratio={worst:.2e} (<= 1e-8); |C(d*)-1|={worst_self:.2e} (<= 1e-10)")


# -------------------------------------------------------------------- BOORL

def boorl_comparison(seeds=tuple(range(20))) -> dict:
    """Early regret and final return of the three agents the dilemma check compares."""
    p = DEFAULTS["boorl"]
    env = boorl_env(p)
    base = boorl_base_config(p)
    out = {v: {"early": [], "final": []} for v in ("boorl", "optimistic", "pessimistic")}
    for seed in seeds:
        data = collect_dataset(env, p["dataset_size"], p["behavior_epsilon"], make_rng(seed, "offline"))
        for v in out:
            run = run_boorl(env, data, replace(base, **VARIANTS[v]), make_rng(seed, "boorl", v))
            out[v]["early"].append(run.early_regret())
            out[v]["final"].append(run.final_return)
    return {v: {k: np.array(x) for k, x in d.items()} for v, d in out.items()}


TIE_TOL = 1e-9


def check_boorl_dilemma(seeds=tuple(range(20))) -> CheckResult:
    r = boorl_comparison(seeds)
    e_mean, e_half = _one_sided(r["boorl"]["early"] - r["optimistic"]["early"])
    f_mean, f_half = _one_sided(r["boorl"]["final"] - r["pessimistic"]["final"])
    early_ok = e_mean + e_half <= 0
    final_ok = f_mean - f_half >= -TIE_TOL
    return CheckResult(9, "boorl_dilemma", early_ok and final_ok,
                       f"early regret BOORL-optimistic={e_mean:.3f} (upper 95% {e_mean + e_half:.3f} <= 0); "
                       f"final return BOORL-pessimistic={f_mean:.2e} (lower 95% {f_mean - f_half:.2e} >= -{TIE_TOL:g})")


def check_boorl_structure() -> CheckResult:
    rng = make_rng(0, "structure")
    fails = []
    members = [EnsembleMember(rng.uniform(0, 20, (4, 4)), np.eye(4)[rng.integers(4, size=4)], i) for i in range(5)]
    for s in range(4):
        prob = selection_probs(members, s)
        if abs(prob.sum() - 1) > 1e-12 or np.any(prob < 0):
            fails.append("normalisation")
        shifted = [EnsembleMember(m.q_table + 7.5, m.policy, m.member_id) for m in members]
        if np.max(np.abs(selection_probs(shifted, s) - prob)) > 1e-12:
            fails.append("shift invariance")
    if {softmax_select(members[:1], 0, 1.0, rng) for _ in range(100)} != {0}:
        fails.append("L=1 determinism")

    p = DEFAULTS["boorl"]
    env = boorl_env(p)
    data = collect_dataset(env, 10_000, p["behavior_epsilon"], make_rng(0, "offline"))
    if not build_masked_dataset(data, 5, 0.9, make_rng(0, "masks")).mask_mean_ok():
        fails.append("mask mean")
    mixer = ReplayMixer(data)
    for i in range(7):
        mixer.add(i % env.n_states, 0, 0.0, 0, False)
    for B in (255, 256):
        _, n_off = mixer.sample(B, rng)
        if n_off != math.ceil(B / 2):
            fails.append(f"batch split B={B}")

    small = replace(boorl_base_config(p), total_steps=300)
    runs = [run_boorl(env, data, small, make_rng(1, "determinism")) for _ in range(2)]
    if runs[0].trace.to_csv() != runs[1].trace.to_csv() or runs[0].episodes_jsonl() != runs[1].episodes_jsonl():
        fails.append("run determinism")
    return CheckResult(10, "boorl_structure", not fails, "all properties hold" if not fails else "failed: " + ", ".join(fails))


# ------------------------------------------------------------------ golden

def check_golden(seeds=(0,), presets=None) -> CheckResult:
    presets = sorted(PRESETS) if presets is None else presets
    diffs = []
    with tempfile.TemporaryDirectory() as tmp:
        for name in presets:
            dirs = []
            for k in range(2):
                d = Path(tmp) / f"{name}_{k}"
                run_suite(from_preset(name, seeds=list(seeds)), d)
                dirs.append(d)
            files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*")
                           if p.suffix in (".csv", ".svg", ".jsonl", ".json") and p.name not in ("manifest.json", "runs.jsonl"))
            for rel in files:
                if not filecmp.cmp(dirs[0] / rel, dirs[1] / rel, shallow=False):
                    diffs.append(f"{name}/{rel}")
    return CheckResult(11, "golden_outputs", not diffs,
                       f"{len(presets)} presets byte-identical across two runs" if not diffs
                       else "differing: " + ", ".join(diffs[:5]))


CHECKS: dict[int, tuple[str, Callable[[], CheckResult]]] = {
    1: ("counterexample", check_ucb_first_pull),
    2: ("counterexample", check_lcb_cumulative),
    3: ("bandit", check_bandit_dilemma),
    4: ("bandit", check_switching),
    5: ("linmdp", check_info_gain_identity),
    6: ("linmdp", check_regret_bound_validity),
    7: ("bounds", check_bound_shape),
    8: ("bounds", check_coverage_oracle),
    9: ("boorl", check_boorl_dilemma),
    10: ("boorl", check_boorl_structure),
    11: ("golden", check_golden),
}


def run_check(number: int) -> CheckResult:
    t0 = time.perf_counter()
    res = CHECKS[number][1]()
    return replace(res, seconds=time.perf_counter() - t0)


def run_checks(suite: str = "all", echo=print) -> list[CheckResult]:
    groups = {g for g, _ in CHECKS.values()}
    if suite != "all" and suite not in groups:
        raise ValueError(f"unknown suite {suite!r}; choose from all, {', '.join(sorted(groups))}")
    results = []
    for number, (group, _) in CHECKS.items():
        if suite in ("all", group):
            res = run_check(number)
            if echo is not None:
                echo(res.line())
            results.append(res)
    return results
