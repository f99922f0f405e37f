"""Finite-horizon linear MDPs and least-squares value iteration agents.

A linear MDP has ``P_h(s'|s,a) = <phi(s,a), mu_h(s')>`` and
``r_h(s,a) = <phi(s,a), theta_h>``. The agents keep a Gaussian posterior
over each step's value weights,

    Lambda_h = sum phi phi^T + ridge * I
    w_h      = Lambda_h^{-1} sum phi * (r + V_{h+1}(s'))

and plan by backward induction with either the posterior mean plus/minus an
information bonus (UCB/LCB) or a posterior sample (TS).

Steps are 0-based in code: ``h = 0 .. H-1`` and values at step ``h`` are
clipped to ``[0, H - h]``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

MODES = ("ucb", "lcb", "ts")


@dataclass(frozen=True)
class LinearMdp:
    features: np.ndarray  # (S, A, d)
    mu: np.ndarray  # (H, d, S)
    theta: np.ndarray  # (H, d)
    initial_state: int = 0

    def __post_init__(self):
        for name in ("features", "mu", "theta"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        S, A, d = self.features.shape
        if self.mu.shape[1:] != (d, S) or self.theta.shape != (self.mu.shape[0], d):
            raise ValueError("features, mu and theta have inconsistent shapes")

    @property
    def n_states(self) -> int:
        return self.features.shape[0]

    @property
    def n_actions(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[2]

    @property
    def H(self) -> int:
        return self.mu.shape[0]

    @cached_property
    def P(self) -> np.ndarray:
        """``P[h, s, a, s']``."""
        return np.einsum("sad,hdt->hsat", self.features, self.mu)

    @cached_property
    def R(self) -> np.ndarray:
        """``R[h, s, a]``."""
        return np.einsum("sad,hd->hsa", self.features, self.theta)

    def transitions(self) -> np.ndarray:
        return self.P

    def rewards(self) -> np.ndarray:
        return self.R

    def check(self, atol: float = 1e-9) -> None:
        """Raise if the linear-MDP conditions fail anywhere."""
        P = self.transitions()
        if np.any(P < -atol) or not np.allclose(P.sum(-1), 1.0, atol=atol):
            raise ValueError("transitions are not probability distributions")
        R = self.rewards()
        if np.any(R < -atol) or np.any(R > 1 + atol):
            raise ValueError("rewards must lie in [0, 1]")
        root_d = math.sqrt(self.d)
        if np.any(np.linalg.norm(self.features, axis=-1) > 1 + atol):
            raise ValueError("feature norms must be at most 1")
        if np.any(np.linalg.norm(self.theta, axis=-1) > root_d + atol):
            raise ValueError("reward vectors must have norm at most sqrt(d)")
        if np.any(np.linalg.norm(self.mu.sum(-1), axis=-1) > root_d + atol):
            raise ValueError("transition measures must have norm at most sqrt(d)")

    def to_json(self) -> str:
        S, A, d = self.features.shape
        doc = {
            "d": d,
            "H": self.H,
            "states": S,
            "actions": A,
            "initial_state": self.initial_state,
            "features": self.features.reshape(S * A, d).tolist(),
            "transitions": self.mu.tolist(),
            "rewards": self.theta.tolist(),
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "LinearMdp":
        doc = json.loads(text)
        S, A, d = doc["states"], doc["actions"], doc["d"]
        features = np.array(doc["features"], dtype=float).reshape(S, A, d)
        mu = np.array(doc["transitions"], dtype=float).reshape(doc["H"], d, S)
        theta = np.array(doc["rewards"], dtype=float).reshape(doc["H"], d)
        return cls(features, mu, theta, int(doc.get("initial_state", 0)))


def make_tabular_linear(n_states: int, n_actions: int, H: int, transitions, rewards,
                        initial_state: int = 0) -> LinearMdp:
    """Embed a tabular MDP with one-hot features, ``d = S * A``.

    ``transitions`` is ``(S, A, S)`` or per-step ``(H, S, A, S)``; ``rewards``
    is ``(S, A)`` or ``(H, S, A)``.
    """
    P = np.asarray(transitions, dtype=float)
    R = np.asarray(rewards, dtype=float)
    if P.ndim == 3:
        P = np.broadcast_to(P, (H,) + P.shape)
    if R.ndim == 2:
        R = np.broadcast_to(R, (H,) + R.shape)
    if P.shape != (H, n_states, n_actions, n_states) or R.shape != (H, n_states, n_actions):
        raise ValueError("transition/reward tables have the wrong shape")
    if np.any(P < 0) or not np.allclose(P.sum(-1), 1.0, atol=1e-12):
        raise ValueError("transition rows must be stochastic")
    if np.any(R < 0) or np.any(R > 1):
        raise ValueError("rewards must lie in [0, 1]")
    d = n_states * n_actions
    features = np.eye(d).reshape(n_states, n_actions, d)
    mu = P.reshape(H, d, n_states).copy()
    theta = R.reshape(H, d).copy()
    return LinearMdp(features, mu, theta, initial_state)


def random_tabular_mdp(n_states: int, n_actions: int, H: int, rng: np.random.Generator,
                       concentration: float = 1.0) -> LinearMdp:
    """Dirichlet transitions and uniform [0, 1] rewards, one-hot embedded."""
    P = rng.dirichlet(np.full(n_states, concentration), size=(H, n_states, n_actions))
    R = rng.random((H, n_states, n_actions))
    return make_tabular_linear(n_states, n_actions, H, P, R)


# ------------------------------------------------------ exact planning

def optimal_values(mdp: LinearMdp) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``Q*[h, s, a]`` and ``V*[h, s]`` (``V*[H] = 0``)."""
    cached = mdp.__dict__.get("_optimal")
    if cached is not None:
        return cached
    P, R = mdp.P, mdp.R
    Q = np.zeros((mdp.H, mdp.n_states, mdp.n_actions))
    V = np.zeros((mdp.H + 1, mdp.n_states))
    for h in range(mdp.H - 1, -1, -1):
        Q[h] = R[h] + P[h] @ V[h + 1]
        V[h] = Q[h].max(-1)
    Q.setflags(write=False)
    V.setflags(write=False)
    mdp.__dict__["_optimal"] = (Q, V)
    return Q, V


def policy_values(mdp: LinearMdp, policies: np.ndarray) -> np.ndarray:
    """Values of deterministic policies ``policies[..., h, s]`` at the initial state."""
    P, R = mdp.P, mdp.R
    batch = policies.shape[:-2]
    V = np.zeros(batch + (mdp.n_states,))
    for h in range(mdp.H - 1, -1, -1):
        Qh = R[h] + np.einsum("sat,...t->...sa", P[h], V)
        V = np.take_along_axis(Qh, policies[..., h, :, None], axis=-1)[..., 0]
    return V[..., mdp.initial_state]


def state_action_occupancy(mdp: LinearMdp, policies: np.ndarray) -> np.ndarray:
    """``d[..., h, s, a]``: probability of visiting (s, a) at step h from the initial state."""
    P = mdp.P
    batch = policies.shape[:-2]
    occ = np.zeros(batch + (mdp.H, mdp.n_states, mdp.n_actions))
    dist = np.zeros(batch + (mdp.n_states,))
    dist[..., mdp.initial_state] = 1.0
    eye = np.eye(mdp.n_actions)
    for h in range(mdp.H):
        sa = dist[..., None] * eye[policies[..., h, :]]
        occ[..., h, :, :] = sa
        dist = np.einsum("...sa,sat->...t", sa, P[h])
    return occ


def optimal_policy(mdp: LinearMdp) -> np.ndarray:
    Q, _ = optimal_values(mdp)
    return Q.argmax(-1)


# ------------------------------------------------------------ buffers

@dataclass
class EpisodeBuffer:
    """Transitions ``(h, s, a, r, s')`` tagged offline or online."""

    source: str = "online"
    h: list = field(default_factory=list)
    s: list = field(default_factory=list)
    a: list = field(default_factory=list)
    r: list = field(default_factory=list)
    s_next: list = field(default_factory=list)

    def __post_init__(self):
        if self.source not in ("offline", "online"):
            raise ValueError("source must be 'offline' or 'online'")

    def __len__(self):
        return len(self.h)

    def add(self, h: int, s: int, a: int, r: float, s_next: int) -> None:
        if not 0 <= r <= 1:
            raise ValueError("rewards must lie in [0, 1]")
        self.h.append(int(h))
        self.s.append(int(s))
        self.a.append(int(a))
        self.r.append(float(r))
        self.s_next.append(int(s_next))

    def extend(self, other: "EpisodeBuffer") -> None:
        for name in ("h", "s", "a", "r", "s_next"):
            getattr(self, name).extend(getattr(other, name))

    def arrays(self):
        return (np.array(self.h, dtype=int), np.array(self.s, dtype=int), np.array(self.a, dtype=int),
                np.array(self.r, dtype=float), np.array(self.s_next, dtype=int))


def collect_buffer(mdp: LinearMdp, policy_probs: np.ndarray, episodes: int,
                   rng: np.random.Generator, source: str = "offline") -> EpisodeBuffer:
    """Roll out a stochastic policy ``policy_probs[h, s, a]`` in the true MDP."""
    P, R = mdp.P, mdp.R
    buf = EpisodeBuffer(source)
    for _ in range(episodes):
        s = mdp.initial_state
        for h in range(mdp.H):
            a = int(rng.choice(mdp.n_actions, p=policy_probs[h, s]))
            s_next = int(rng.choice(mdp.n_states, p=P[h, s, a]))
            buf.add(h, s, a, R[h, s, a], s_next)
            s = s_next
    return buf


# ---------------------------------------------------------- posterior

@dataclass(frozen=True)
class PosteriorSlice:
    mean: np.ndarray
    precision: np.ndarray


@dataclass(frozen=True)
class GaussianPosterior:
    """Per-step Gaussian belief over value weights.

    Besides ``means``/``precisions`` it keeps the data moments
    ``sum phi * r`` and ``sum phi e_{s'}^T`` so that means can be refitted
    for any next-step value function without revisiting the data.
    """

    means: np.ndarray  # (H, d)
    precisions: np.ndarray  # (H, d, d)
    ridge: float
    reward_moments: np.ndarray  # (H, d)
    next_moments: np.ndarray  # (H, d, S)

    @classmethod
    def prior(cls, d: int, H: int, n_states: int, ridge: float = 1.0) -> "GaussianPosterior":
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        return cls(np.zeros((H, d)), np.broadcast_to(ridge * np.eye(d), (H, d, d)).copy(), float(ridge),
                   np.zeros((H, d)), np.zeros((H, d, n_states)))

    @classmethod
    def for_mdp(cls, mdp: LinearMdp, ridge: float = 1.0) -> "GaussianPosterior":
        return cls.prior(mdp.d, mdp.H, mdp.n_states, ridge)

    @property
    def H(self) -> int:
        return self.means.shape[0]

    def updated(self, features: np.ndarray, buffer: EpisodeBuffer) -> "GaussianPosterior":
        """Absorb transitions; means are left for the planner to refit."""
        if len(buffer) == 0:
            return self
        h, s, a, r, s_next = buffer.arrays()
        phi = features[s, a]
        prec = self.precisions.copy()
        rm = self.reward_moments.copy()
        nm = self.next_moments.copy()
        np.add.at(prec, h, phi[:, :, None] * phi[:, None, :])
        np.add.at(rm, h, phi * r[:, None])
        np.add.at(nm, (h, slice(None), s_next), phi)
        return replace(self, precisions=prec, reward_moments=rm, next_moments=nm)

    def targets(self, h: int, value_next: np.ndarray) -> np.ndarray:
        """``sum phi * (r + V(s'))`` at step h; ``value_next`` may carry leading batch axes."""
        return self.reward_moments[h] + value_next @ self.next_moments[h].T

    def with_means(self, means: np.ndarray) -> "GaussianPosterior":
        return replace(self, means=np.asarray(means, dtype=float))

    def to_csv(self, path: str | Path) -> None:
        """One row per step: h, then the mean, then the precision row-major."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            d = self.means.shape[1]
            writer.writerow(["h"] + [f"mean_{i}" for i in range(d)]
                            + [f"prec_{i}_{j}" for i in range(d) for j in range(d)])
            for h in range(self.H):
                writer.writerow([h + 1] + [repr(float(x)) for x in self.means[h]]
                                + [repr(float(x)) for x in self.precisions[h].ravel()])


def posterior_fit(features: np.ndarray, buffer: EpisodeBuffer, value_next: np.ndarray, h: int,
                  ridge: float) -> PosteriorSlice:
    """Ridge regression of ``r + V_{h+1}(s')`` on ``phi(s, a)`` over step-h data."""
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    d = features.shape[-1]
    precision = ridge * np.eye(d)
    target = np.zeros(d)
    for hh, s, a, r, s_next in zip(buffer.h, buffer.s, buffer.a, buffer.r, buffer.s_next):
        if hh != h:
            continue
        phi = features[s, a]
        precision += np.outer(phi, phi)
        target += phi * (r + value_next[s_next])
    return PosteriorSlice(linalg.solve(precision, target, assume_a="pos"), precision)


def _cholesky(precision: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("precision matrix is not symmetric positive definite") from exc


def info_gain(phi, precision) -> float:
    """``0.5 * log(1 + phi^T Lambda^{-1} phi)``."""
    phi = np.asarray(phi, dtype=float)
    chol = _cholesky(np.asarray(precision, dtype=float))
    z = linalg.solve_triangular(chol, phi, lower=True)
    return 0.5 * math.log1p(float(z @ z))


def info_gains(features: np.ndarray, precision: np.ndarray) -> np.ndarray:
    """Vectorised :func:`info_gain` over the leading axes of ``features``."""
    chol = _cholesky(precision)
    flat = features.reshape(-1, features.shape[-1])
    z = linalg.solve_triangular(chol, flat.T, lower=True)
    return 0.5 * np.log1p((z * z).sum(0)).reshape(features.shape[:-1])


def q_estimate(posterior: GaussianPosterior, phi, mode: str, gamma: float, h: int = 0,
               clip: bool = True) -> float:
    """Posterior-mean Q plus (ucb) or minus (lcb) ``gamma/2 * sqrt(info_gain)``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    phi = np.asarray(phi, dtype=float)
    q = float(posterior.means[h] @ phi)
    if mode != "mean":
        bonus = 0.5 * gamma * math.sqrt(info_gain(phi, posterior.precisions[h]))
        if mode == "ucb":
            q += bonus
        elif mode == "lcb":
            q -= bonus
        else:
            raise ValueError(f"unknown mode {mode!r}")
    if clip:
        q = min(max(q, 0.0), float(posterior.H - h))
    return q


def ts_sample_weights(posterior: GaussianPosterior, sigma: float, rng: np.random.Generator,
                      size: int | None = None) -> np.ndarray:
    """Draw ``w_h ~ N(mean_h, sigma^2 Lambda_h^{-1})`` for every step."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    H, d = posterior.means.shape
    n = 1 if size is None else size
    out = np.empty((n, H, d))
    for h in range(H):
        chol = _cholesky(posterior.precisions[h])
        z = rng.standard_normal((d, n))
        out[:, h] = posterior.means[h] + sigma * linalg.solve_triangular(chol.T, z, lower=False).T
    return out[0] if size is None else out


# ------------------------------------------------------------- agents

@dataclass(frozen=True)
class AgentConfig:
    """Knobs of the LSVI agents.

    ``gamma_mult`` is the absolute constant c in
    ``Gamma = 2 c H d sqrt(log(4 d T / delta))``; ``total_steps`` is T.
    """

    mode: str = "ts"
    gamma_mult: float = 0.1
    delta: float = 0.05
    ridge: float = 1.0
    ts_scale: float = 1.0
    total_steps: int = 1000
    resample_each_step: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.gamma_mult < 0:
            raise ValueError("gamma_mult must be non-negative")
        if self.ridge <= 0 or self.ts_scale <= 0:
            raise ValueError("ridge and ts_scale must be positive")

    def gamma(self, d: int, H: int) -> float:
        T = max(self.total_steps, 2)
        return 2 * self.gamma_mult * H * d * math.sqrt(math.log(4 * d * T / self.delta))


def plan(mdp: LinearMdp, posterior: GaussianPosterior, mode: str, rng: np.random.Generator | None = None,
         gamma: float = 0.0, sigma: float = 1.0, n: int = 1, start_step: int = 0):
    """Backward induction from the posterior.

    ``mode`` is one of ``mean``, ``ucb``, ``lcb``, ``ts``. Returns
    ``(Q, policy, means)`` with shapes ``(n, H, S, A)``, ``(n, H, S)`` and
    ``(n, H, d)``; TS draws ``n`` independent weight sequences.
    """
    H, S, A = mdp.H, mdp.n_states, mdp.n_actions
    d = mdp.d
    Q = np.zeros((n, H, S, A))
    means = np.zeros((n, H, d))
    V = np.zeros((n, S))
    for h in range(H - 1, start_step - 1, -1):
        prec = posterior.precisions[h]
        chol = _cholesky(prec)
        b = posterior.targets(h, V)
        mean = linalg.cho_solve((chol, True), b.T).T
        means[:, h] = mean
        w = mean
        if mode == "ts":
            z = rng.standard_normal((d, n))
            w = mean + sigma * linalg.solve_triangular(chol.T, z, lower=False).T
        q = np.einsum("sad,nd->nsa", mdp.features, w)
        if mode in ("ucb", "lcb"):
            bonus = 0.5 * gamma * np.sqrt(info_gains(mdp.features, prec))
            q = q + bonus if mode == "ucb" else q - bonus
        Q[:, h] = np.clip(q, 0.0, H - h)
        V = Q[:, h].max(-1)
    return Q, Q.argmax(-1), means


def warm_start_from_offline(mdp: LinearMdp, offline: EpisodeBuffer, ridge: float = 1.0,
                            mode: str = "mean", gamma: float = 0.0,
                            rng: np.random.Generator | None = None) -> GaussianPosterior:
    """Posterior after the offline buffer, means fitted under ``mode``'s value targets."""
    if len(offline) and offline.source != "offline":
        raise ValueError("warm start expects an offline-tagged buffer")
    post = GaussianPosterior.for_mdp(mdp, ridge).updated(mdp.features, offline)
    _, _, means = plan(mdp, post, mode, rng=rng, gamma=gamma)
    return post.with_means(means[0])


@dataclass
class EpisodeResult:
    buffer: EpisodeBuffer
    regret: float
    policy: np.ndarray


def run_lsvi_episode(mdp: LinearMdp, posterior: GaussianPosterior, config: AgentConfig,
                     rng: np.random.Generator) -> EpisodeResult:
    """Plan, act for one episode in the true MDP, and report exact regret.

    Regret is ``V*_1(s_1) - V^pi_1(s_1)`` for the policy used this episode.
    The posterior is not modified; fold ``result.buffer`` in with
    :meth:`GaussianPosterior.updated`.
    """
    if posterior.means.shape != (mdp.H, mdp.d):
        raise ValueError("posterior does not match the MDP dimensions")
    gamma = config.gamma(mdp.d, mdp.H)
    P, R = mdp.P, mdp.R
    _, policy, _ = plan(mdp, posterior, config.mode, rng, gamma, config.ts_scale)
    policy = policy[0]
    buf = EpisodeBuffer("online")
    s = mdp.initial_state
    for h in range(mdp.H):
        if config.resample_each_step and h > 0 and config.mode == "ts":
            _, fresh, _ = plan(mdp, posterior, "ts", rng, gamma, config.ts_scale, start_step=h)
            policy[h:] = fresh[0, h:]
        a = int(policy[h, s])
        s_next = int(rng.choice(mdp.n_states, p=P[h, s, a]))
        buf.add(h, s, a, R[h, s, a], s_next)
        s = s_next
    _, V_star = optimal_values(mdp)
    regret = float(V_star[0, mdp.initial_state] - policy_values(mdp, policy))
    return EpisodeResult(buf, max(regret, 0.0), policy)


def run_lsvi(mdp: LinearMdp, config: AgentConfig, episodes: int, rng: np.random.Generator,
             posterior: GaussianPosterior | None = None, update: bool = True) -> np.ndarray:
    """Per-episode regrets of an LSVI agent; ``update=False`` keeps the belief fixed."""
    post = posterior if posterior is not None else GaussianPosterior.for_mdp(mdp, config.ridge)
    regrets = np.empty(episodes)
    for k in range(episodes):
        result = run_lsvi_episode(mdp, post, config, rng)
        regrets[k] = result.regret
        if update:
            post = post.updated(mdp.features, result.buffer)
    return regrets
