"""Regret bounds, Bayesian coverage and information-ratio estimates.

The offline-to-online Thompson-sampling bound is

    c * sqrt(d^3 H^3 iota) * (sqrt(N / C + T) - sqrt(N / C)),
    iota = log(4 d T / delta),

and the per-episode check compares exact regret with
``sum_h Gamma * sqrt(I_h) + 2 delta H^2``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import linalg

from .linear_mdp import (EpisodeBuffer, GaussianPosterior, LinearMdp, info_gains, optimal_policy,
                         optimal_values, plan, policy_values, state_action_occupancy)


@dataclass(frozen=True)
class BoundInputs:
    """Inputs of the regret bound.

    ``iota_horizon`` is the step budget inside the logarithm; it defaults to
    ``T`` and is clamped to at least 2 so that ``iota`` stays positive.
    """

    N: float
    T: float
    d: int
    H: int
    C_dagger: float = 1.0
    c: float = 1.0
    delta: float = 0.05
    iota_horizon: float | None = None

    def __post_init__(self):
        if self.N < 0 or self.T < 0:
            raise ValueError("N and T must be non-negative")
        if self.d < 1 or self.H < 1:
            raise ValueError("d and H must be positive")
        if self.C_dagger < 1:
            raise ValueError("the coverage coefficient is at least 1")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def iota(self) -> float:
        horizon = self.T if self.iota_horizon is None else self.iota_horizon
        return math.log(4 * self.d * max(horizon, 2) / self.delta)

    @property
    def scale(self) -> float:
        return self.c * math.sqrt(self.d ** 3 * self.H ** 3 * self.iota)


def _sqrt_gap(a: float, b: float) -> float:
    # sqrt(a + b) - sqrt(a) without cancellation
    if b == 0:
        return 0.0
    return b / (math.sqrt(a + b) + math.sqrt(a))


def bound_eval(inputs: BoundInputs) -> float:
    return inputs.scale * _sqrt_gap(inputs.N / inputs.C_dagger, inputs.T)


def suboptimality_bound(inputs: BoundInputs) -> float:
    """``c sqrt(C d^3 H^3 iota / N)``; undefined without offline data."""
    if inputs.N < 1:
        raise ValueError("the suboptimality bound needs N >= 1")
    return inputs.scale * math.sqrt(inputs.C_dagger / inputs.N)


@dataclass(frozen=True)
class BoundRow:
    N: float
    T: float
    bound: float


def bound_curve(N_values: Iterable[float], T_values: Iterable[float], d: int, H: int,
                C_dagger: float = 1.0, c: float = 1.0, delta: float = 0.05,
                iota_horizon: float | None = None) -> list[BoundRow]:
    """Tabulate :func:`bound_eval` over the product grid (N outer, T inner).

    ``iota_horizon`` defaults to the largest T on the grid, so ``iota`` is a
    single constant across the table.
    """
    N_values = list(N_values)
    T_values = list(T_values)
    if not N_values or not T_values:
        raise ValueError("grid must be non-empty")
    horizon = max(T_values) if iota_horizon is None else iota_horizon
    rows = []
    for N in N_values:
        for T in T_values:
            inputs = BoundInputs(N, T, d, H, C_dagger, c, delta, horizon)
            rows.append(BoundRow(float(N), float(T), bound_eval(inputs)))
    return rows


def curve_to_csv(rows: Sequence[BoundRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("N", "T", "bound"))
    for row in rows:
        writer.writerow((repr(row.N), repr(row.T), repr(row.bound)))
    return buf.getvalue()


# ----------------------------------------------------------- coverage

@dataclass(frozen=True)
class CoverageResult:
    value: float
    per_h: np.ndarray
    n_posterior_samples: int


def feature_covariance(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_{s,a} weights[s, a] phi(s, a) phi(s, a)^T``."""
    return np.einsum("sa,sai,saj->ij", weights, features, features)


def max_generalized_eigenvalue(target: np.ndarray, reference: np.ndarray, rtol: float = 1e-10) -> float:
    """``sup_x x^T target x / x^T reference x`` over the range of ``reference``.

    Returns ``inf`` when ``target`` has mass outside that range.
    """
    evals, evecs = linalg.eigh(reference)
    scale = max(evals.max(), 0.0)
    if scale == 0.0:
        raise ValueError("reference covariance is zero")
    keep = evals > rtol * scale
    basis = evecs[:, keep]
    off = evecs[:, ~keep]
    if off.size and np.abs(off.T @ target @ off).max() > rtol * max(np.abs(target).max(), 1.0):
        return math.inf
    whiten = basis / np.sqrt(evals[keep])
    reduced = whiten.T @ target @ whiten
    return float(linalg.eigvalsh((reduced + reduced.T) / 2).max())


def coverage_coefficient(mdp: LinearMdp, behavior: np.ndarray,
                         posterior_sampler: Callable[[np.random.Generator], LinearMdp],
                         n_samples: int, rng: np.random.Generator | None = None) -> CoverageResult:
    """Bayesian coverage of the behaviour distribution ``behavior[h, s, a]``.

    For each sampled model the optimal policy is found by dynamic
    programming and its feature covariance at step h is compared with the
    behaviour covariance through the largest generalised eigenvalue.
    """
    behavior = np.asarray(behavior, dtype=float)
    if behavior.shape != (mdp.H, mdp.n_states, mdp.n_actions):
        raise ValueError("behavior must have shape (H, S, A)")
    refs = [feature_covariance(mdp.features, behavior[h]) for h in range(mdp.H)]
    for ref in refs:
        if not np.any(ref):
            raise ValueError("behavior distribution has a step with no mass")
    rng = rng if rng is not None else np.random.default_rng()
    totals = np.zeros(mdp.H)
    for _ in range(n_samples):
        model = posterior_sampler(rng)
        occ = state_action_occupancy(model, optimal_policy(model))
        for h in range(mdp.H):
            target = feature_covariance(model.features, occ[h])
            totals[h] += max_generalized_eigenvalue(target, refs[h])
    per_h = totals / n_samples
    return CoverageResult(float(per_h.max()), per_h, n_samples)


def point_mass(mdp: LinearMdp) -> Callable[[np.random.Generator], LinearMdp]:
    return lambda rng: mdp


# ----------------------------------------------------- information ratio

@dataclass(frozen=True)
class InfoRatioEstimate:
    gamma_hat: float
    n_samples: int
    violation_rate: float


def estimate_info_ratio(features: np.ndarray, posterior: GaussianPosterior, n_samples: int,
                        delta: float, rng: np.random.Generator, scale: float = 1.0,
                        joint: bool = True, steps: Sequence[int] | None = None) -> InfoRatioEstimate:
    """Smallest Gamma with ``|Q_w - E Q_w| <= Gamma/2 * sqrt(I)`` w.p. >= 1 - delta/2.

    ``Q_w(s, a) = <phi(s, a), w_h>`` with ``w_h ~ N(mean_h, scale^2 Lambda_h^{-1})``.
    With ``joint=True`` one posterior draw must satisfy the inequality at
    every (s, a, h) simultaneously; otherwise each (draw, s, a, h) tuple
    counts separately. The returned Gamma is the exact empirical minimum
    (an order statistic of the per-draw ratios). ``scale=0`` is a point mass.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    steps = range(posterior.H) if steps is None else steps
    flat = features.reshape(-1, features.shape[-1])
    ratios = []
    for h in steps:
        prec = posterior.precisions[h]
        chol = linalg.cholesky(prec, lower=True)
        gains = info_gains(flat, prec)
        z = rng.standard_normal((flat.shape[1], n_samples))
        noise = scale * linalg.solve_triangular(chol.T, z, lower=False)  # (d, n)
        dev = np.abs(flat @ noise)  # (points, n)
        degenerate = gains <= 0
        if np.any(dev[degenerate] > 0):
            raise ValueError("zero information with a non-degenerate Q-law")
        safe = np.where(degenerate, 1.0, gains)
        r = np.where(degenerate[:, None], 0.0, 2 * dev / np.sqrt(safe)[:, None])
        ratios.append(r)
    ratios = np.concatenate(ratios, axis=0)  # (points * steps, n)
    per_event = ratios.max(axis=0) if joint else ratios.ravel()
    per_event = np.sort(per_event)
    m = len(per_event)
    allowed = math.floor(m * delta / 2)
    gamma = float(per_event[m - 1 - allowed]) if allowed < m else 0.0
    violation = float(np.count_nonzero(per_event > gamma) / m)
    return InfoRatioEstimate(gamma, n_samples, violation)


# ----------------------------------------------------- per-episode check

@dataclass(frozen=True)
class EpisodeRecord:
    regret: float
    info_gains: np.ndarray
    gamma_hat: float
    delta: float
    H: int

    @property
    def bound(self) -> float:
        gains = np.clip(np.asarray(self.info_gains, dtype=float), 0.0, None)
        return float(self.gamma_hat * np.sqrt(gains).sum() + 2 * self.delta * self.H ** 2)


@dataclass
class RegretBoundReport:
    regrets: np.ndarray
    bounds: np.ndarray
    slacks: np.ndarray = field(init=False)

    def __post_init__(self):
        self.slacks = self.bounds - self.regrets

    @property
    def violation_fraction(self) -> float:
        return float(np.mean(self.slacks < 0)) if len(self.slacks) else 0.0

    def to_jsonl(self) -> str:
        lines = []
        for k, (reg, bnd, slack) in enumerate(zip(self.regrets, self.bounds, self.slacks), start=1):
            lines.append(json.dumps({"episode": k, "regret": float(reg), "bound": float(bnd),
                                     "slack": float(slack)}))
        return "\n".join(lines) + ("\n" if lines else "")


def check_regret_bound(records: Sequence[EpisodeRecord]) -> RegretBoundReport:
    regrets = np.array([r.regret for r in records], dtype=float)
    bounds = np.array([r.bound for r in records], dtype=float)
    return RegretBoundReport(regrets, bounds)


@dataclass
class RegretBoundRun:
    online: list[EpisodeRecord]
    offline: list[EpisodeRecord]


def regret_bound_experiment(mdp: LinearMdp, episodes: int, rng: np.random.Generator, delta: float = 0.05,
                            n_replays: int = 200, info_samples: int = 2000, ridge: float = 1.0,
                            ts_scale: float = 1.0) -> RegretBoundRun:
    """Run Thompson sampling and record both sides of the per-episode bound.

    At episode k the expected regret given the history is estimated by
    replaying ``n_replays`` fresh posterior draws, each planned and scored
    exactly against the true MDP. The information term for step h is the
    expected ``0.5 log(1 + phi^T Lambda_h^{-1} phi)`` over the state-action
    pairs the replayed policies visit (online form) or that the optimal
    policy visits (offline form). Gamma is re-estimated every episode.
    """
    post = GaussianPosterior.for_mdp(mdp, ridge)
    _, V_star = optimal_values(mdp)
    best = V_star[0, mdp.initial_state]
    opt_occ = state_action_occupancy(mdp, optimal_policy(mdp))
    online, offline = [], []
    P, R = mdp.P, mdp.R
    for _ in range(episodes):
        _, policies, _ = plan(mdp, post, "ts", rng, sigma=ts_scale, n=n_replays + 1)
        replays, acting = policies[:n_replays], policies[n_replays]
        regret = float(np.mean(best - policy_values(mdp, replays)))
        occ = state_action_occupancy(mdp, replays).mean(axis=0)
        gains = np.stack([info_gains(mdp.features, post.precisions[h]) for h in range(mdp.H)])
        info_online = (occ * gains).sum(axis=(1, 2))
        info_offline = (opt_occ * gains).sum(axis=(1, 2))
        gamma = estimate_info_ratio(mdp.features, post, info_samples, delta, rng, scale=ts_scale).gamma_hat
        online.append(EpisodeRecord(regret, info_online, gamma, delta, mdp.H))
        offline.append(EpisodeRecord(regret, info_offline, gamma, delta, mdp.H))

        buf = EpisodeBuffer("online")
        s = mdp.initial_state
        for h in range(mdp.H):
            a = int(acting[h, s])
            s_next = int(rng.choice(mdp.n_states, p=P[h, s, a]))
            buf.add(h, s, a, R[h, s, a], s_next)
            s = s_next
        post = post.updated(mdp.features, buf)
    return RegretBoundRun(online, offline)
