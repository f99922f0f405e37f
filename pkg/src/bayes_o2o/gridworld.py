"""Small tabular gridworlds with exact dynamic programming.

Maps are plain text: ``#`` wall, ``.`` floor, ``S`` start, ``G`` goal.
Entering the goal pays 1 and ends the episode; every other step pays 0.
With probability ``slip_prob`` the executed action is drawn uniformly.
"""
from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

ACTIONS = ("up", "down", "left", "right")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

DEFAULT_MAP = """\
S....
.##..
...#.
.#...
....G
"""


@dataclass(frozen=True)
class Gridworld:
    width: int
    height: int
    walls: frozenset
    start: tuple
    goal: tuple
    H: int = 20
    slip_prob: float = 0.1
    discount: float = 0.95

    def __post_init__(self):
        if not 0 <= self.slip_prob < 1:
            raise ValueError("slip_prob must lie in [0, 1)")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        if self.start in self.walls or self.goal in self.walls:
            raise ValueError("start and goal must be floor cells")
        if self.distance_to_goal() is None:
            raise ValueError("goal is not reachable from start")

    @classmethod
    def from_text(cls, text: str, **kwargs) -> "Gridworld":
        rows = [line for line in text.strip("\n").splitlines() if line.strip()]
        height, width = len(rows), max(len(r) for r in rows)
        walls, start, goal = set(), None, None
        for i, row in enumerate(rows):
            for j, ch in enumerate(row.ljust(width, "#")):
                if ch == "#":
                    walls.add((i, j))
                elif ch == "S":
                    start = (i, j)
                elif ch == "G":
                    goal = (i, j)
                elif ch != ".":
                    raise ValueError(f"unknown map symbol {ch!r}")
        if start is None or goal is None:
            raise ValueError("map needs exactly one S and one G")
        return cls(width, height, frozenset(walls), start, goal, **kwargs)

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "Gridworld":
        return cls.from_text(Path(path).read_text(), **kwargs)

    @property
    def n_states(self) -> int:
        return self.width * self.height

    @property
    def n_actions(self) -> int:
        return len(ACTIONS)

    def index(self, cell) -> int:
        return cell[0] * self.width + cell[1]

    def cell(self, state: int):
        return divmod(state, self.width)

    @property
    def start_state(self) -> int:
        return self.index(self.start)

    @property
    def goal_state(self) -> int:
        return self.index(self.goal)

    def _move(self, cell, action: int):
        di, dj = _MOVES[action]
        nxt = (cell[0] + di, cell[1] + dj)
        if not (0 <= nxt[0] < self.height and 0 <= nxt[1] < self.width) or nxt in self.walls:
            return cell
        return nxt

    def distance_to_goal(self):
        seen = {self.start: 0}
        queue = deque([self.start])
        while queue:
            cell = queue.popleft()
            if cell == self.goal:
                return seen[cell]
            for a in range(len(_MOVES)):
                nxt = self._move(cell, a)
                if nxt not in seen:
                    seen[nxt] = seen[cell] + 1
                    queue.append(nxt)
        return None

    @cached_property
    def P(self) -> np.ndarray:
        """``P[s, a, s']``; the goal is absorbing."""
        S, A = self.n_states, self.n_actions
        P = np.zeros((S, A, S))
        for s in range(S):
            cell = self.cell(s)
            if cell in self.walls or s == self.goal_state:
                P[s, :, s] = 1.0
                continue
            for a in range(A):
                P[s, a, self.index(self._move(cell, a))] += 1 - self.slip_prob
                for b in range(A):
                    P[s, a, self.index(self._move(cell, b))] += self.slip_prob / A
        return P

    @cached_property
    def R(self) -> np.ndarray:
        """Expected reward ``R[s, a]``: probability of entering the goal."""
        R = self.P[:, :, self.goal_state].copy()
        R[self.goal_state] = 0.0
        return R

    def step(self, state: int, action: int, rng: np.random.Generator):
        """Sample ``(next_state, reward, done)``."""
        if rng.random() < self.slip_prob:
            action = int(rng.integers(self.n_actions))
        nxt = self.index(self._move(self.cell(state), action))
        done = nxt == self.goal_state
        return nxt, (1.0 if done else 0.0), done

    # ---------------------------------------------------- exact planning

    def _backup(self, V: np.ndarray) -> np.ndarray:
        Q = self.R + self.discount * self.P @ V
        Q[self.goal_state] = 0.0
        return Q

    def optimal_value(self) -> float:
        """Best expected discounted return from the start within ``H`` steps."""
        V = np.zeros(self.n_states)
        for _ in range(self.H):
            V = self._backup(V).max(axis=1)
        return float(V[self.start_state])

    def policy_value(self, policy: np.ndarray) -> float:
        """Expected discounted return of a stationary ``policy[s, a]`` within ``H`` steps."""
        V = np.zeros(self.n_states)
        for _ in range(self.H):
            V = (policy * self._backup(V)).sum(axis=1)
        return float(V[self.start_state])

    def optimal_q(self, tol: float = 1e-12) -> np.ndarray:
        """Infinite-horizon discounted ``Q*`` (used to build behaviour policies)."""
        V = np.zeros(self.n_states)
        for _ in range(10_000):
            Q = self._backup(V)
            V_new = Q.max(axis=1)
            if np.max(np.abs(V_new - V)) < tol:
                break
            V = V_new
        return Q


def greedy(q: np.ndarray) -> np.ndarray:
    """One-hot policy, ties to the lowest action index."""
    pol = np.zeros_like(q)
    pol[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
    return pol


@dataclass
class TransitionData:
    """Logged transitions ``(s, a, r, s', done)`` as parallel arrays."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.s)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("s", "a", "r", "s_next", "done"))
        for row in zip(self.s, self.a, self.r, self.s_next, self.done):
            writer.writerow((int(row[0]), int(row[1]), repr(float(row[2])), int(row[3]), int(row[4])))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TransitionData":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != ("s", "a", "r", "s_next", "done"):
            raise ValueError(f"unexpected header {header!r}")
        rows = list(reader)
        cols = list(zip(*rows)) if rows else [(), (), (), (), ()]
        return cls(np.array(cols[0], dtype=int), np.array(cols[1], dtype=int),
                   np.array(cols[2], dtype=float), np.array(cols[3], dtype=int),
                   np.array(cols[4], dtype=int).astype(bool))


def collect_dataset(env: Gridworld, n: int, epsilon: float, rng: np.random.Generator) -> TransitionData:
    """``n`` transitions from an epsilon-greedy version of the optimal policy."""
    behavior = (1 - epsilon) * greedy(env.optimal_q()) + epsilon / env.n_actions
    rows = []
    while len(rows) < n:
        s = env.start_state
        for _ in range(env.H):
            a = int(rng.choice(env.n_actions, p=behavior[s]))
            s_next, r, done = env.step(s, a, rng)
            rows.append((s, a, r, s_next, done))
            s = s_next
            if done or len(rows) == n:
                break
    s, a, r, s_next, done = (np.array(c) for c in zip(*rows))
    return TransitionData(s.astype(int), a.astype(int), r.astype(float), s_next.astype(int), done.astype(bool))
