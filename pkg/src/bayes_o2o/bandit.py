"""Bernoulli multi-armed bandits warm-started from logged pulls.

Agents: UCB, LCB, Thompson sampling, and soft/hard LCB-to-UCB switchers.
Index agents score arms with ``mean + w * k * sqrt(log N / N_a)`` where
``N`` counts offline and online pulls together and ``w`` is +1 (UCB),
-1 (LCB) or a schedule weight (switchers).

The long online loop lives in a numba kernel; the Python-level selection
functions below implement the same rules and are what the tests pin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .rng import child_rng, kernel_seed
from .traces import RegretTrace

AGENT_KINDS = ("ucb", "lcb", "ts", "soft", "hard")


@dataclass(frozen=True)
class BanditModel:
    """Arm success probabilities.

    With ``deterministic=True`` every pull of arm ``i`` pays exactly
    ``probs[i]``; the counterexample bandits use this.
    """

    probs: np.ndarray
    deterministic: bool = False

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) < 2:
            raise ValueError("a bandit needs at least two arms")
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("arm probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", probs)

    @property
    def n_arms(self) -> int:
        return len(self.probs)

    @property
    def best_value(self) -> float:
        return float(self.probs.max())

    def pull(self, arm: int, rng: np.random.Generator) -> float:
        if self.deterministic:
            return float(self.probs[arm])
        return float(rng.random() < self.probs[arm])


@dataclass(frozen=True)
class BetaPosterior:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if alpha.shape != beta.shape or alpha.ndim != 1:
            raise ValueError("alpha and beta must be vectors of equal length")
        if np.any(alpha <= 0) or np.any(beta <= 0):
            raise ValueError("Beta parameters must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def uniform(cls, n_arms: int, prior_alpha: float = 1.0, prior_beta: float = 1.0) -> "BetaPosterior":
        return cls(np.full(n_arms, float(prior_alpha)), np.full(n_arms, float(prior_beta)))

    @classmethod
    def from_log(cls, log: "PullLog", prior_alpha: float = 1.0, prior_beta: float = 1.0) -> "BetaPosterior":
        return cls(prior_alpha + log.sums, prior_beta + log.counts - log.sums)

    @property
    def mean(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)


@dataclass(frozen=True)
class PullLog:
    """Pull counts and reward sums per arm."""

    counts: np.ndarray
    sums: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        sums = np.asarray(self.sums, dtype=float)
        if counts.shape != sums.shape or counts.ndim != 1:
            raise ValueError("counts and sums must be vectors of equal length")
        if np.any(counts < 0) or np.any(sums < 0) or np.any(sums > counts + 1e-9):
            raise ValueError("need counts >= 0 and 0 <= sums <= counts")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "sums", sums)

    @classmethod
    def empty(cls, n_arms: int) -> "PullLog":
        return cls(np.zeros(n_arms, dtype=np.int64), np.zeros(n_arms))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def means(self) -> np.ndarray:
        """Empirical means; arms never pulled report 0."""
        return np.divide(self.sums, self.counts, out=np.zeros_like(self.sums), where=self.counts > 0)

    def add(self, arm: int, reward: float) -> "PullLog":
        counts = self.counts.copy()
        sums = self.sums.copy()
        counts[arm] += 1
        sums[arm] += reward
        return PullLog(counts, sums)


@dataclass(frozen=True)
class SwitchSchedule:
    """Confidence weight that moves from pessimism (-1) to optimism (+1).

    soft: ``min(A t / T - 1, 1)``; hard: ``2 * 1{t >= T / B} - 1``.
    """

    kind: str
    param: float
    horizon: int

    def __post_init__(self):
        if self.kind not in ("soft", "hard"):
            raise ValueError(f"unknown switch kind {self.kind!r}")
        if self.param <= 0 or self.horizon < 1:
            raise ValueError("switch parameter and horizon must be positive")

    def weight(self, t: float) -> float:
        if self.kind == "soft":
            return min(self.param * t / self.horizon - 1.0, 1.0)
        return 1.0 if t >= self.horizon / self.param else -1.0


@dataclass(frozen=True)
class AgentSpec:
    """Which agent to run and its knobs.

    ``param`` is A for soft switching and B for hard switching.
    """

    kind: str
    k: float = 1.0
    param: float = 2.0
    prior_alpha: float = 1.0
    prior_beta: float = 1.0

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent {self.kind!r}; expected one of {AGENT_KINDS}")
        if self.k <= 0:
            raise ValueError("confidence multiplier k must be positive")

    @property
    def tag(self) -> str:
        if self.kind in ("soft", "hard"):
            return f"{self.kind}{self.param:g}"
        return self.kind


# ---------------------------------------------------------------- sampling

def sample_bandit(n_arms: int, prior_alpha: float = 1.0, prior_beta: float = 1.0,
                  rng: np.random.Generator | None = None) -> BanditModel:
    """Draw arm probabilities i.i.d. from Beta(prior_alpha, prior_beta)."""
    if n_arms < 2:
        raise ValueError("n_arms must be at least 2")
    if prior_alpha <= 0 or prior_beta <= 0:
        raise ValueError("prior parameters must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    return BanditModel(rng.beta(prior_alpha, prior_beta, size=n_arms))


def _rewards_for_counts(bandit: BanditModel, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if bandit.deterministic:
        return counts * bandit.probs
    return rng.binomial(counts, bandit.probs).astype(float)


def collect_offline_weighted(bandit: BanditModel, weights, n: int,
                             rng: np.random.Generator) -> PullLog:
    """Log ``n`` pulls of a behaviour policy that picks arms by ``weights``."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (bandit.n_arms,):
        raise ValueError("one weight per arm required")
    if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("weights must be a probability vector")
    if n < 0:
        raise ValueError("n must be non-negative")
    counts = rng.multinomial(n, weights / weights.sum())
    return PullLog(counts, _rewards_for_counts(bandit, counts, rng))


def collect_offline_uniform(bandit: BanditModel, n: int, rng: np.random.Generator) -> PullLog:
    return collect_offline_weighted(bandit, np.full(bandit.n_arms, 1.0 / bandit.n_arms), n, rng)


def posterior_update(post: BetaPosterior, arm: int, reward: float) -> BetaPosterior:
    if not 0 <= arm < len(post.alpha):
        raise IndexError(f"arm {arm} out of range")
    alpha = post.alpha.copy()
    beta = post.beta.copy()
    alpha[arm] += reward
    beta[arm] += 1.0 - reward
    return BetaPosterior(alpha, beta)


# --------------------------------------------------------------- selection

def confidence_width(log: PullLog) -> np.ndarray:
    """``sqrt(log N / N_a)`` with N_a >= 1 (surrogate) and log N >= 1."""
    log_n = max(math.log(log.total), 1.0) if log.total > 0 else 1.0
    return np.sqrt(log_n / np.maximum(log.counts, 1))


def _index_select(log: PullLog, weight: float) -> int:
    return int(np.argmax(log.means + weight * confidence_width(log)))


def select_ucb(log: PullLog, k: float = 1.0, t: int = 1) -> int:
    return _index_select(log, k)


def select_lcb(log: PullLog, k: float = 1.0, t: int = 1) -> int:
    return _index_select(log, -k)


def select_switch(log: PullLog, schedule: SwitchSchedule, t: int, k: float = 1.0) -> int:
    return _index_select(log, schedule.weight(t) * k)


def select_ts(post: BetaPosterior, rng: np.random.Generator) -> int:
    return int(np.argmax(rng.beta(post.alpha, post.beta)))


# ----------------------------------------------------------------- kernel

_KIND_CODE = {"ucb": 0, "lcb": 1, "ts": 2, "soft": 3, "hard": 4}


@numba.njit(cache=True)
def _simulate(probs, deterministic, counts0, sums0, kind, k, param, horizon,
              prior_alpha, prior_beta, uniforms, seed):
    n_arms = probs.shape[0]
    counts = counts0.astype(np.float64).copy()
    sums = sums0.copy()
    best = probs.max()
    regret = np.empty(horizon)
    total = counts.sum()
    np.random.seed(seed)
    for t in range(1, horizon + 1):
        arm = 0
        if kind == 2:
            top = -1.0
            for i in range(n_arms):
                theta = np.random.beta(prior_alpha + sums[i], prior_beta + counts[i] - sums[i])
                if theta > top:
                    top = theta
                    arm = i
        else:
            if kind == 0:
                w = k
            elif kind == 1:
                w = -k
            elif kind == 3:
                w = min(param * t / horizon - 1.0, 1.0) * k
            else:
                w = (1.0 if t >= horizon / param else -1.0) * k
            log_n = 1.0
            if total > 0:
                log_n = max(np.log(total), 1.0)
            top = -np.inf
            for i in range(n_arms):
                c = counts[i]
                mean = sums[i] / c if c > 0 else 0.0
                score = mean + w * np.sqrt(log_n / max(c, 1.0))
                if score > top:
                    top = score
                    arm = i
        if deterministic:
            reward = probs[arm]
        else:
            reward = 1.0 if uniforms[t - 1] < probs[arm] else 0.0
        counts[arm] += 1.0
        sums[arm] += reward
        total += 1.0
        regret[t - 1] = best - probs[arm]
    return regret


def run_bandit_experiment(bandit: BanditModel, offline: PullLog, agent: AgentSpec,
                          horizon: int, rng: np.random.Generator,
                          seed: int | None = None) -> RegretTrace:
    """Warm-start ``agent`` from ``offline`` and play ``horizon`` online pulls.

    Reward noise and the agent's own sampling come from separate streams
    derived from ``rng``, so agents run with the same ``rng`` state face the
    same reward draws.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if offline.counts.shape != (bandit.n_arms,):
        raise ValueError("offline log does not match the bandit")
    reward_rng = child_rng(rng, "rewards")
    agent_rng = child_rng(rng, "agent")
    uniforms = np.zeros(1) if bandit.deterministic else reward_rng.random(horizon)
    regret = _simulate(bandit.probs, bandit.deterministic, offline.counts, offline.sums,
                       _KIND_CODE[agent.kind], float(agent.k), float(agent.param), int(horizon),
                       float(agent.prior_alpha), float(agent.prior_beta), uniforms,
                       kernel_seed(agent_rng))
    return RegretTrace(regret, seed=seed, agent_tag=agent.tag)


# ---------------------------------------------------------- counterexamples

@dataclass(frozen=True)
class Counterexample:
    """Two-arm construction where the second arm's value is a coin flip.

    ``high`` and ``low`` are the two possible values of the second arm,
    each with probability 1/2; the first arm always pays ``first``.
    """

    epsilon: float
    n: int
    first: float
    high: float
    low: float
    behavior: np.ndarray

    def draw(self, rng: np.random.Generator) -> BanditModel:
        second = self.high if rng.random() < 0.5 else self.low
        return BanditModel(np.array([self.first, second]), deterministic=True)


def _check_counterexample_args(epsilon: float, n: int):
    if not 0 < epsilon < 0.05:
        raise ValueError("construction needs 0 < epsilon < 0.05")
    if n < 500:
        raise ValueError("construction needs N >= 500")


def _behavior(n: int) -> np.ndarray:
    return np.array([(n - 1) / n, 1.0 / n])


def make_counterexample_ucb(epsilon: float, n: int) -> Counterexample:
    """Arm 1 pays 2eps; arm 2 pays 2.1eps or 0; arm 2 is logged once in N."""
    _check_counterexample_args(epsilon, n)
    return Counterexample(epsilon, n, 2 * epsilon, 2.1 * epsilon, 0.0, _behavior(n))


def make_counterexample_lcb(epsilon: float, n: int) -> Counterexample:
    """Arm 1 pays eps; arm 2 pays 4eps or 0; arm 2 is logged once in N."""
    _check_counterexample_args(epsilon, n)
    return Counterexample(epsilon, n, epsilon, 4 * epsilon, 0.0, _behavior(n))


@dataclass(frozen=True)
class CounterexampleStats:
    draws: int
    event_rate: float
    mean_regret: float
    std_error: float

    @property
    def lower_3se(self) -> float:
        return self.mean_regret - 3 * self.std_error


def ucb_first_pull_study(ce: Counterexample, draws: int, rng: np.random.Generator,
                         k: float = 1.0) -> CounterexampleStats:
    """Monte-Carlo estimate of E[r(a*) - r(a_UCB)] right after the offline phase."""
    regrets = np.empty(draws)
    hits = 0
    for i in range(draws):
        bandit = ce.draw(rng)
        log = collect_offline_weighted(bandit, ce.behavior, ce.n, rng)
        hits += log.counts[1] == 1
        arm = select_ucb(log, k, t=1)
        regrets[i] = bandit.best_value - bandit.probs[arm]
    return CounterexampleStats(draws, hits / draws, float(regrets.mean()),
                               float(regrets.std(ddof=1) / math.sqrt(draws)))


def lcb_cumulative_study(ce: Counterexample, draws: int, horizon: int,
                         rng: np.random.Generator, k: float = 1.0) -> CounterexampleStats:
    """Monte-Carlo estimate of E[sum_t r(a*) - r(a_t^LCB)] over ``horizon`` steps."""
    totals = np.empty(draws)
    hits = 0
    agent = AgentSpec("lcb", k=k)
    for i in range(draws):
        bandit = ce.draw(rng)
        log = collect_offline_weighted(bandit, ce.behavior, ce.n, rng)
        hits += log.counts[1] == 1
        totals[i] = run_bandit_experiment(bandit, log, agent, horizon, rng).cumulative[-1]
    return CounterexampleStats(draws, hits / draws, float(totals.mean()),
                               float(totals.std(ddof=1) / math.sqrt(draws)))
