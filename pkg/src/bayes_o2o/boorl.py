"""Bootstrapped offline-to-online ensemble on tabular gridworlds.

Offline, each of ``L`` members fits a Q-table on its own bootstrap-masked
slice of the logged data and acts through a support-constrained score that
mixes Q with the log behaviour frequency. Online, a member is picked per
step by a softmax over its greedy Q-value, the chosen member acts with
epsilon-greedy noise, and every member takes a TD step on a batch drawn
half from the offline buffer and half from the online buffer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gridworld import Gridworld, TransitionData
from .rng import child_rng
from .traces import RegretTrace


@dataclass
class MaskedDataset:
    data: TransitionData
    masks: np.ndarray
    p: float

    @property
    def L(self) -> int:
        return self.masks.shape[0]

    def mask_mean_ok(self, sigmas: float = 3.0) -> bool:
        """Every row's mask mean lies within ``sigmas`` binomial deviations of ``p``."""
        n = self.masks.shape[1]
        tol = sigmas * math.sqrt(self.p * (1 - self.p) / n)
        return bool(np.all(np.abs(self.masks.mean(axis=1) - self.p) <= tol))


def build_masked_dataset(data: TransitionData, L: int, p: float, rng: np.random.Generator) -> MaskedDataset:
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if L < 1:
        raise ValueError("L must be at least 1")
    if not 0 < p <= 1:
        raise ValueError("mask ratio p must lie in (0, 1]")
    masks = (rng.random((L, len(data))) < p).astype(np.int8)
    return MaskedDataset(data, masks, p)


@dataclass
class EnsembleMember:
    q_table: np.ndarray
    policy: np.ndarray
    member_id: int
    flagged: frozenset = frozenset()

    @property
    def greedy_actions(self) -> np.ndarray:
        return self.policy.argmax(axis=1)

    def value(self, state: int) -> float:
        """``Q(s, pi(s))`` under the member's own policy."""
        return float(self.policy[state] @ self.q_table[state])


def empty_member(n_states: int, n_actions: int, member_id: int, q_init: float = 0.0) -> EnsembleMember:
    q = np.full((n_states, n_actions), float(q_init))
    return EnsembleMember(q, np.full((n_states, n_actions), 1.0 / n_actions), member_id)


def _regularized_policy(q: np.ndarray, counts: np.ndarray, lambda_bc: float) -> np.ndarray:
    """Greedy policy over ``Q + lambda_bc * log(n(s,a)/n(s))`` restricted to seen actions."""
    S, A = q.shape
    n_s = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = q + lambda_bc * np.log(counts / n_s)
    score[counts == 0] = -np.inf
    pol = np.zeros((S, A))
    seen = n_s[:, 0] > 0
    pol[seen, np.argmax(score[seen], axis=1)] = 1.0
    return pol


def offline_train_member(
    member: EnsembleMember,
    data: MaskedDataset,
    lambda_bc: float,
    iters: int = 1000,
    discount: float = 0.95,
    H: float = 20.0,
    tol: float = 1e-6,
) -> EnsembleMember:
    """Fit the member's Q-table on its masked records by fixed-point iteration."""
    if lambda_bc <= 0:
        raise ValueError("lambda_bc must be positive")
    S, A = member.q_table.shape
    ell = member.member_id
    keep = data.masks[ell].astype(bool)
    d = data.data
    s, a, r, s2 = d.s[keep], d.a[keep], d.r[keep], d.s_next[keep]
    cont = (~d.done[keep]).astype(float)

    counts = np.zeros((S, A))
    np.add.at(counts, (s, a), 1.0)
    support = np.zeros((S, A))
    np.add.at(support, (d.s, d.a), 1.0)

    q = np.zeros((S, A))
    pol = _regularized_policy(q, counts, lambda_bc)
    for _ in range(iters):
        target = r + discount * cont * (pol[s2] * q[s2]).sum(axis=1)
        sums = np.zeros((S, A))
        np.add.at(sums, (s, a), target)
        q_new = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        q_new = np.clip(q_new, 0.0, H)
        pol_new = _regularized_policy(q_new, counts, lambda_bc)
        residual = np.max(np.abs(q_new - q)) if len(s) else 0.0
        q, pol = q_new, pol_new
        if residual < tol:
            break

    # states without masked data fall back to the dataset support, else to all actions
    flagged = []
    for state in np.flatnonzero(counts.sum(axis=1) == 0):
        allowed = support[state] > 0
        if not allowed.any():
            allowed[:] = True
        pol[state] = allowed / allowed.sum()
        flagged.append(int(state))
    return EnsembleMember(q, pol, member.member_id, frozenset(flagged))


def selection_probs(members, state: int, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = np.array([m.value(state) for m in members]) / temperature
    w = np.exp(logits - logits.max())
    return w / w.sum()


def softmax_select(members, state: int, temperature: float, rng: np.random.Generator) -> int:
    if len(members) == 1:
        return 0
    p = selection_probs(members, state, temperature)
    return int(rng.choice(len(p), p=p))


def mixture_policy(members, temperature: float = 1.0, epsilon: float = 0.0) -> np.ndarray:
    """Per-state action distribution induced by softmax selection over members."""
    S, A = members[0].q_table.shape
    pol = np.zeros((S, A))
    for state in range(S):
        p = selection_probs(members, state, temperature)
        pol[state] = sum(pi * m.policy[state] for pi, m in zip(p, members))
    return (1 - epsilon) * pol + epsilon / A


class ReplayMixer:
    """Offline/online replay with a fixed half-and-half batch split.

    With ``uniform=True`` both buffers are pooled and sampled uniformly.
    """

    def __init__(self, offline: TransitionData | None, uniform: bool = False):
        self.offline = offline
        self.uniform = uniform
        self._online = []

    @property
    def n_online(self) -> int:
        return len(self._online)

    @property
    def n_offline(self) -> int:
        return 0 if self.offline is None else len(self.offline)

    def add(self, s, a, r, s_next, done):
        self._online.append((int(s), int(a), float(r), int(s_next), bool(done)))

    def online_data(self) -> TransitionData:
        if not self._online:
            return TransitionData(*(np.zeros(0, dtype=t) for t in (int, int, float, int, bool)))
        cols = list(zip(*self._online))
        return TransitionData(np.array(cols[0]), np.array(cols[1]), np.array(cols[2], dtype=float),
                              np.array(cols[3]), np.array(cols[4], dtype=bool))

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Return ``(batch, n_offline_rows)``; rows are drawn with replacement."""
        n_off, n_on = self.n_offline, self.n_online
        if n_off + n_on == 0:
            raise ValueError("both buffers are empty")
        if self.uniform:
            idx = rng.integers(n_off + n_on, size=batch_size)
            off_idx, on_idx = idx[idx < n_off], idx[idx >= n_off] - n_off
        elif n_on == 0:
            off_idx, on_idx = rng.integers(n_off, size=batch_size), np.zeros(0, dtype=int)
        elif n_off == 0:
            off_idx, on_idx = np.zeros(0, dtype=int), rng.integers(n_on, size=batch_size)
        else:
            half = batch_size // 2
            off_idx = rng.integers(n_off, size=batch_size - half)
            on_idx = rng.integers(n_on, size=half)
        parts = []
        if len(off_idx):
            o = self.offline
            parts.append((o.s[off_idx], o.a[off_idx], o.r[off_idx], o.s_next[off_idx], o.done[off_idx]))
        if len(on_idx):
            rows = [self._online[i] for i in on_idx]
            cols = list(zip(*rows))
            parts.append((np.array(cols[0]), np.array(cols[1]), np.array(cols[2], dtype=float),
                          np.array(cols[3]), np.array(cols[4], dtype=bool)))
        batch = TransitionData(*(np.concatenate(c) for c in zip(*parts)))
        return batch, len(off_idx)


@dataclass(frozen=True)
class BoorlConfig:
    L: int = 5
    p: float = 0.9
    lambda_bc: float = 0.4
    temperature: float = 1.0
    epsilon: float = 0.05
    total_steps: int = 3000
    batch_size: int = 256
    lr: float = 0.5
    offline_iters: int = 1000
    uniform_buffer: bool = False
    use_offline: bool = True
    learn_online: bool = True
    q_init: float = 0.0

    def __post_init__(self):
        if self.L < 1 or not 0 < self.p <= 1 or self.lambda_bc <= 0 or self.temperature <= 0:
            raise ValueError(f"invalid ensemble config: {self}")
        if not 0 <= self.epsilon <= 1 or self.total_steps < 0 or self.batch_size < 1 or not 0 < self.lr <= 1:
            raise ValueError(f"invalid online config: {self}")


OPTIMISTIC = dict(L=1, use_offline=False, q_init=1.0)
PESSIMISTIC = dict(L=1, p=1.0, learn_online=False)
# config overrides per named variant
VARIANTS = {
    "boorl": {},
    "full": {},
    "optimistic": OPTIMISTIC,
    "pessimistic": PESSIMISTIC,
    "ensemble1": dict(L=1),
    "uniform_buffer": dict(uniform_buffer=True),
}


def td_update(members, batch: TransitionData, lr: float, discount: float, H: float) -> None:
    """One averaged TD step per visited ``(s, a)``; every member sees the same batch."""
    s, a, r, s2 = batch.s, batch.a, batch.r, batch.s_next
    cont = (~batch.done).astype(float)
    S, A = members[0].q_table.shape
    counts = np.zeros((S, A))
    np.add.at(counts, (s, a), 1.0)
    hit = counts > 0
    for m in members:
        q = m.q_table
        target = np.clip(r + discount * cont * q[s2].max(axis=1), 0.0, H)
        err = np.zeros((S, A))
        np.add.at(err, (s, a), target - q[s, a])
        q[hit] = np.clip(q[hit] + lr * err[hit] / counts[hit], 0.0, H)
        pol = np.zeros_like(q)
        pol[np.arange(S), q.argmax(axis=1)] = 1.0
        m.policy = pol


@dataclass
class StepRecord:
    s: int
    a: int
    r: float
    s_next: int
    done: bool
    member: int


def online_step(members, mixer: ReplayMixer, env: Gridworld, state: int, config: BoorlConfig,
                rng: np.random.Generator, learn: bool = True) -> StepRecord:
    idx = softmax_select(members, state, config.temperature, rng)
    if rng.random() < config.epsilon:
        action = int(rng.integers(env.n_actions))
    else:
        action = int(rng.choice(env.n_actions, p=members[idx].policy[state]))
    s_next, r, done = env.step(state, action, rng)
    mixer.add(state, action, r, s_next, done)
    if learn:
        batch, _ = mixer.sample(config.batch_size, rng)
        td_update(members, batch, config.lr, env.discount, env.H)
    return StepRecord(state, action, r, s_next, done, idx)


@dataclass
class BoorlRun:
    trace: RegretTrace
    episode_returns: np.ndarray
    episode_values: np.ndarray
    episode_starts: np.ndarray
    final_return: float
    offline_return: float
    selections: np.ndarray
    members: list = field(repr=False, default_factory=list)

    @property
    def selection_entropy(self) -> float:
        if len(self.selections) == 0:
            return 0.0
        freq = np.bincount(self.selections) / len(self.selections)
        freq = freq[freq > 0]
        return float(-(freq * np.log(freq)).sum())

    def early_regret(self, fraction: float = 0.1) -> float:
        n = int(math.ceil(fraction * len(self.trace)))
        return float(self.trace.instantaneous[:n].sum())

    def episodes_jsonl(self) -> str:
        lines = []
        for k, (start, ret, val) in enumerate(zip(self.episode_starts, self.episode_returns, self.episode_values)):
            lines.append(json.dumps({"episode": k, "start_step": int(start), "return": float(ret),
                                     "policy_value": float(val),
                                     "regret": float(self.trace.instantaneous[start])}))
        return "\n".join(lines) + ("\n" if lines else "")


def train_offline(env: Gridworld, data: TransitionData, config: BoorlConfig, rng: np.random.Generator):
    if not config.use_offline:
        return [empty_member(env.n_states, env.n_actions, 0, config.q_init)]
    masked = build_masked_dataset(data, config.L, config.p, child_rng(rng, "masks"))
    return [
        offline_train_member(empty_member(env.n_states, env.n_actions, ell), masked, config.lambda_bc,
                             config.offline_iters, env.discount, env.H)
        for ell in range(config.L)
    ]


def run_boorl(env: Gridworld, data: TransitionData, config: BoorlConfig, rng: np.random.Generator) -> BoorlRun:
    """Offline phase then ``total_steps`` online steps.

    Regret of an episode is ``V*`` minus the exact value of the acting
    mixture (exploration noise included) at the start of that episode, and
    is booked on the episode's first step.
    """
    members = train_offline(env, data, config, rng)
    online_rng = child_rng(rng, "online")
    mixer = ReplayMixer(data if config.use_offline else None, uniform=config.uniform_buffer)
    v_star = env.optimal_value()
    offline_return = env.policy_value(mixture_policy(members, config.temperature))

    inst = np.zeros(config.total_steps)
    starts, returns, values, selections = [], [], [], []
    t = 0
    while t < config.total_steps:
        value = env.policy_value(mixture_policy(members, config.temperature, config.epsilon))
        inst[t] = max(v_star - value, 0.0)
        starts.append(t)
        values.append(value)
        state, ret = env.start_state, 0.0
        for h in range(env.H):
            rec = online_step(members, mixer, env, state, config, online_rng, learn=config.learn_online)
            selections.append(rec.member)
            ret += env.discount ** h * rec.r
            t += 1
            state = rec.s_next
            if rec.done or t == config.total_steps:
                break
        returns.append(ret)

    final = env.policy_value(mixture_policy(members, config.temperature))
    return BoorlRun(
        trace=RegretTrace(inst),
        episode_returns=np.array(returns),
        episode_values=np.array(values),
        episode_starts=np.array(starts, dtype=int),
        final_return=final,
        offline_return=offline_return,
        selections=np.array(selections, dtype=int),
        members=members,
    )


@dataclass
class AblationRow:
    variant: str
    early_mean: float
    early_std: float
    final_mean: float
    final_std: float
    entropy_mean: float


def ablate(env: Gridworld, data_for_seed, variants, seeds, base: BoorlConfig, make_rng) -> list[AblationRow]:
    """Run each named variant over ``seeds``; ``data_for_seed(seed)`` supplies the offline data."""
    if len(variants) < 2:
        raise ValueError("need at least two variants")
    rows = []
    for name in variants:
        cfg = replace(base, **VARIANTS[name])
        runs = [run_boorl(env, data_for_seed(seed), cfg, make_rng(seed, "boorl", name)) for seed in seeds]
        early = np.array([r.early_regret() for r in runs])
        final = np.array([r.final_return for r in runs])
        ent = np.array([r.selection_entropy for r in runs])
        ddof = 1 if len(runs) > 1 else 0
        rows.append(AblationRow(name, early.mean(), early.std(ddof=ddof), final.mean(), final.std(ddof=ddof), ent.mean()))
    return rows


def ablation_csv(rows) -> str:
    out = ["variant,early_regret_mean,early_regret_std,final_return_mean,final_return_std,selection_entropy"]
    for r in rows:
        out.append(f"{r.variant},{r.early_mean!r},{r.early_std!r},{r.final_mean!r},{r.final_std!r},{r.entropy_mean!r}")
    return "\n".join(out) + "\n"
