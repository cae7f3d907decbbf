"""Station on/off selection by tabular Q-learning (objectives P1, P2, P3).

States for P1/P2 are the activation bitmask itself. The P3 scheme observes a
coarse error state from fuzzy c-means crossed with the active-station count.
Actions toggle one station or terminate the episode.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

TERMINATE = -1


class InfeasibleError(RuntimeError):
    """No station subset meets the MSE cap."""

    def __init__(self, message: str, best_mse: float):
        super().__init__(message)
        self.best_mse = best_mse


class DegenerateClusterError(ValueError):
    """FCM cannot separate the requested number of states."""


class Objective(str, Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"


@dataclass(frozen=True)
class SelectionState:
    active: tuple[bool, ...]

    @classmethod
    def from_mask(cls, mask: int, n: int) -> "SelectionState":
        return cls(tuple(bool(mask >> i & 1) for i in range(n)))

    @classmethod
    def all_on(cls, n: int) -> "SelectionState":
        return cls((True,) * n)

    @property
    def mask(self) -> int:
        return sum(1 << i for i, a in enumerate(self.active) if a)

    @property
    def count(self) -> int:
        return sum(self.active)

    @property
    def ids(self) -> list[int]:
        return [i for i, a in enumerate(self.active) if a]

    def toggle(self, n: int) -> "SelectionState":
        a = list(self.active)
        a[n] = not a[n]
        return SelectionState(tuple(a))


@dataclass(frozen=True)
class RewardConfig:
    c0: float = 10.0
    tau_e: float = 1.0
    tau_r: float = 0.001
    objective: Objective = Objective.P1
    mse_cap: Optional[float] = None
    uav_weights: Optional[tuple[float, ...]] = None  # P2 weights, default all ones
    cap_penalty: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.tau_e < 0 or self.tau_r < 0:
            raise ValueError("tau_e and tau_r must be >= 0")
        if self.objective is Objective.P3 and not (self.mse_cap is not None and self.mse_cap > 0):
            raise ValueError("P3 needs a positive mse_cap")


def reward(mse_per_uav: Sequence[float], active_count: int, cfg: RewardConfig) -> float:
    """C0 - tau_e * M - tau_r * Rs, with M per objective.

    P1 uses the first UAV's MSE, P2 the weighted sum over UAVs, and P3 drops
    the error term but subtracts ``cap_penalty`` when any UAV reaches the cap.
    """
    m = np.asarray(mse_per_uav, dtype=float)
    if m.size == 0:
        raise ValueError("need at least one MSE value")
    if active_count < 0:
        raise ValueError("active_count must be >= 0")
    if cfg.objective is Objective.P1:
        return cfg.c0 - cfg.tau_e * float(m[0]) - cfg.tau_r * active_count
    if cfg.objective is Objective.P2:
        w = np.ones_like(m) if cfg.uav_weights is None else np.asarray(cfg.uav_weights, dtype=float)
        return cfg.c0 - cfg.tau_e * float(w @ m) - cfg.tau_r * active_count
    penalty = cfg.cap_penalty if bool(np.any(m >= cfg.mse_cap)) else 0.0
    return cfg.c0 - cfg.tau_r * active_count - penalty


# -- fuzzy c-means error states -----------------------------------------------------

@dataclass
class ErrorStateModel:
    centroids: np.ndarray  # ascending RMSE
    memberships: np.ndarray  # (samples, states)
    fuzzifier: float = 2.0

    @property
    def state_count(self) -> int:
        return len(self.centroids)

    def state_of(self, rmse: float) -> int:
        """State label 1..K; S1 is the worst (largest RMSE) cluster."""
        k = int(np.argmin(np.abs(self.centroids - rmse)))
        return self.state_count - k


def fcm_states(rmse_samples: Sequence[float], state_count: int = 5, fuzzifier: float = 2.0,
               tol: float = 1e-6, max_iter: int = 1000) -> ErrorStateModel:
    """One-dimensional fuzzy c-means, initialized at evenly spaced sample quantiles."""
    x = np.asarray(rmse_samples, dtype=float)
    if state_count < 1 or len(x) < state_count:
        raise ValueError("need at least state_count samples")
    if fuzzifier <= 1:
        raise ValueError("fuzzifier must be > 1")
    if state_count > 1 and np.unique(x).size < state_count:
        raise DegenerateClusterError("fewer distinct samples than states")
    c = np.quantile(x, (np.arange(state_count) + 0.5) / state_count)
    p = 2.0 / (fuzzifier - 1.0)
    u = None
    for _ in range(max_iter):
        d = np.abs(x[:, None] - c[None, :])
        zero = d == 0
        with np.errstate(divide="ignore"):
            inv = np.where(zero, 0.0, d ** -p)
        u = inv / inv.sum(axis=1, keepdims=True) if state_count > 1 else np.ones_like(d)
        hit = zero.any(axis=1)
        u[hit] = zero[hit] / zero[hit].sum(axis=1, keepdims=True)
        w = u**fuzzifier
        c_new = (w * x[:, None]).sum(axis=0) / w.sum(axis=0)
        done = np.max(np.abs(c_new - c)) < tol
        c = c_new
        if done:
            break
    order = np.argsort(c)
    if state_count > 1 and np.min(np.diff(c[order])) <= tol:
        raise DegenerateClusterError("clusters collapsed onto each other")
    return ErrorStateModel(c[order], u[:, order], fuzzifier)


# -- Q-table ---------------------------------------------------------------------------

@dataclass
class QPolicy:
    q_values: np.ndarray  # (states, n_stations + 1); last column is terminate
    n_stations: int
    learning_rate: float = 0.1
    discount: float = 0.9
    epsilon: float = 0.3
    epsilon_final: float = 0.01
    encoding: str = "mask"  # or "fcm_rs"
    error_states: Optional[ErrorStateModel] = None
    episode_log: list = field(default_factory=list)  # (episode, reward, epsilon, rs)

    @classmethod
    def initial(cls, n_stations: int, encoding: str = "mask", error_states: Optional[ErrorStateModel] = None,
                **kw) -> "QPolicy":
        if encoding == "mask":
            rows = 2**n_stations
        elif encoding == "fcm_rs":
            if error_states is None:
                raise ValueError("fcm_rs encoding needs an error-state model")
            rows = error_states.state_count * (n_stations + 1)
        else:
            raise ValueError(f"unknown encoding {encoding!r}")
        return cls(np.zeros((rows, n_stations + 1)), n_stations, encoding=encoding,
                   error_states=error_states, **kw)

    def action_index(self, action: int) -> int:
        return self.n_stations if action == TERMINATE else action

    def greedy(self, row: int, allowed: Sequence[int]) -> int:
        """Highest-valued allowed action; ties go to the first in ``allowed``."""
        vals = [self.q_values[row, self.action_index(a)] for a in allowed]
        return allowed[int(np.argmax(vals))]

    def to_dict(self) -> dict:
        d = {
            "state_encoding": self.encoding,
            "n_stations": self.n_stations,
            "actions": [f"toggle_{i}" for i in range(self.n_stations)] + ["terminate"],
            "q_values": self.q_values.tolist(),
            "hyperparameters": {"learning_rate": self.learning_rate, "discount": self.discount,
                                "epsilon_initial": self.epsilon, "epsilon_final": self.epsilon_final},
            "reward_trace": [r for _, r, _, _ in self.episode_log],
        }
        if self.error_states is not None:
            d["fcm_centroids"] = self.error_states.centroids.tolist()
            d["fcm_fuzzifier"] = self.error_states.fuzzifier
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QPolicy":
        es = None
        if "fcm_centroids" in d:
            es = ErrorStateModel(np.asarray(d["fcm_centroids"], float), np.zeros((0, len(d["fcm_centroids"]))),
                                 d["fcm_fuzzifier"])
        h = d["hyperparameters"]
        return cls(np.asarray(d["q_values"], float), d["n_stations"], h["learning_rate"], h["discount"],
                   h["epsilon_initial"], h["epsilon_final"], d["state_encoding"], es,
                   [(i, r, math.nan, -1) for i, r in enumerate(d["reward_trace"])])

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "QPolicy":
        return cls.from_dict(json.loads(Path(path).read_text()))


def q_update(policy: QPolicy, s: int, a: int, r: float, s_next: Optional[int]) -> QPolicy:
    """Q(s,a) += lr * (r + discount * max Q(s', .) - Q(s,a)); ``s_next`` None ends the episode.

    ``s`` and ``s_next`` are table rows. Updates in place and returns the policy.
    """
    j = policy.action_index(a)
    future = 0.0 if s_next is None else float(np.max(policy.q_values[s_next]))
    q = policy.q_values[s, j]
    policy.q_values[s, j] = q + policy.learning_rate * (r + policy.discount * future - q)
    return policy


# -- environment -------------------------------------------------------------------------

class Environment(Protocol):
    n_stations: int

    def mse(self, state: SelectionState) -> np.ndarray:
        """Per-UAV mean squared localization error for the active stations."""


class TableEnvironment:
    """Environment backed by a precomputed MSE per mask (tests and toy scenes)."""

    def __init__(self, table: dict[int, Sequence[float]], n_stations: int):
        self.table = {k: np.asarray(v, float) for k, v in table.items()}
        self.n_stations = n_stations

    def mse(self, state: SelectionState) -> np.ndarray:
        return self.table[state.mask]


def exhaustive(env: Environment, cfg: RewardConfig) -> tuple[SelectionState, float]:
    """Best non-empty subset by reward, ties broken toward fewer stations then lower mask."""
    best, best_r = None, -math.inf
    n = env.n_stations
    for k in range(1, n + 1):
        for ids in combinations(range(n), k):
            s = SelectionState(tuple(i in ids for i in range(n)))
            r = reward(env.mse(s), s.count, cfg)
            if r > best_r + 1e-12:
                best, best_r = s, r
    return best, best_r


def _row(policy: QPolicy, env: Environment, state: SelectionState) -> int:
    if policy.encoding == "mask":
        return state.mask
    rmse = math.sqrt(float(np.max(env.mse(state)))) if state.count else math.inf
    label = policy.error_states.state_of(rmse) if state.count else 1
    return (label - 1) * (policy.n_stations + 1) + state.count


def _allowed(state: SelectionState, forbid_empty: bool) -> list[int]:
    acts = [i for i in range(len(state.active)) if not (forbid_empty and state.active[i] and state.count == 1)]
    return acts + [TERMINATE]


def _shaped(env: Environment, cfg: RewardConfig, s: SelectionState, s_next: SelectionState) -> float:
    def r(x: SelectionState) -> float:
        return reward(env.mse(x), x.count, cfg)
    return r(s_next) - r(s)


def train(env: Environment, cfg: RewardConfig, episodes: int, rng_seed: int,
          policy: Optional[QPolicy] = None, start: Optional[SelectionState] = None,
          max_steps: Optional[int] = None) -> QPolicy:
    """Epsilon-greedy Q-learning; epsilon anneals linearly over the episodes.

    Each toggle is rewarded with the change of the objective reward r(s') - r(s)
    and terminating scores 0, so an episode's return telescopes to the reward of
    the state it stops in relative to where it began. P1/P2 episodes start from
    all stations on; P3 episodes start from a random single station and never
    switch the last station off. The episode log records the objective reward
    of the final state.
    """
    n = env.n_stations
    if policy is None:
        policy = QPolicy.initial(n)
    rng = np.random.default_rng(rng_seed)
    p3 = cfg.objective is Objective.P3
    steps = 2 * n if max_steps is None else max_steps
    eps0, eps1 = policy.epsilon, policy.epsilon_final
    for ep in range(episodes):
        eps = eps0 + (eps1 - eps0) * (ep / max(episodes - 1, 1))
        if start is not None:
            s = start
        elif p3:
            s = SelectionState(tuple(i == int(rng.integers(n)) for i in range(n)))
        else:
            s = SelectionState.all_on(n)
        for _ in range(steps):
            allowed = _allowed(s, forbid_empty=p3)
            row = _row(policy, env, s)
            a = allowed[int(rng.integers(len(allowed)))] if rng.random() < eps else policy.greedy(row, allowed)
            if a == TERMINATE:
                q_update(policy, row, a, 0.0, None)
                break
            s_next = s.toggle(a)
            q_update(policy, row, a, _shaped(env, cfg, s, s_next), _row(policy, env, s_next))
            s = s_next
        policy.episode_log.append((ep, reward(env.mse(s), s.count, cfg), eps, s.count))
    return policy


def rollout(policy: QPolicy, env: Environment, start: SelectionState, forbid_empty: bool = False,
            max_steps: Optional[int] = None) -> list[SelectionState]:
    """Greedy trajectory from ``start``; stops on terminate, a revisit or the step limit."""
    steps = 2 * policy.n_stations if max_steps is None else max_steps
    path = [start]
    s = start
    for _ in range(steps):
        a = policy.greedy(_row(policy, env, s), _allowed(s, forbid_empty))
        if a == TERMINATE:
            break
        s = s.toggle(a)
        if s in path:
            break
        path.append(s)
    return path


def select(policy: QPolicy, env: Environment, start: Optional[SelectionState] = None) -> SelectionState:
    """Final state of the greedy P1/P2 rollout from all stations on."""
    return rollout(policy, env, start or SelectionState.all_on(env.n_stations))[-1]


def _meets(env: Environment, s: SelectionState, cap: float) -> bool:
    return s.count > 0 and bool(np.all(env.mse(s) < cap))


def select_p3(policy: QPolicy, env: Environment, cfg: RewardConfig) -> SelectionState:
    """Fewest stations keeping every UAV's MSE below the cap.

    The greedy policy rollout starts from the best single station and stops
    at the first state meeting the cap. If it never does, stations are added
    one at a time by largest error reduction. Stations are then pruned while
    the cap still holds, so the returned state always meets it.
    """
    if cfg.mse_cap is None:
        raise ValueError("select_p3 needs mse_cap")
    n = env.n_stations
    cap = cfg.mse_cap
    full = SelectionState.all_on(n)
    if not _meets(env, full, cap):
        raise InfeasibleError(f"cap {cap:.4g} not met even with all {n} stations",
                              float(np.max(env.mse(full))))
    singles = [SelectionState(tuple(i == k for i in range(n))) for k in range(n)]
    s0 = min(singles, key=lambda s: (float(np.max(env.mse(s))), s.mask))
    found = None
    for s in rollout(policy, env, s0, forbid_empty=True):
        if _meets(env, s, cap):
            found = s
            break
    if found is None:
        s = s0
        while not _meets(env, s, cap):
            adds = [s.toggle(i) for i in range(n) if not s.active[i]]
            s = min(adds, key=lambda x: (float(np.max(env.mse(x))), x.mask))
        found = s
    improved = True
    while improved and found.count > 1:
        improved = False
        drops = [found.toggle(i) for i in found.ids]
        drops = [d for d in drops if _meets(env, d, cap)]
        if drops:
            found = min(drops, key=lambda x: (float(np.max(env.mse(x))), x.mask))
            improved = True
    return found


def write_training_csv(policy: QPolicy, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "reward", "epsilon", "rs"])
        for ep, r, eps, rs in policy.episode_log:
            w.writerow([ep, f"{r:.9g}", f"{eps:.9g}", rs])
