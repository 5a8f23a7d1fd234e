"""Finite episodic MDPs, exact dynamic programming and pseudo-regret accounting.

Steps are indexed from 0 internally: row ``h`` of a value table holds the
value with ``H - h`` steps to go, so row ``H`` is the terminal row of zeros.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import kernels

ROW_SUM_TOL = 1e-9


def _readonly(a: NDArray) -> NDArray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def as_probs(kernel) -> NDArray[np.float64]:
    """Return the (S, A, S) probability array behind a kernel-like object."""
    if isinstance(kernel, TransitionKernel):
        return kernel.probs
    return np.asarray(kernel, dtype=np.float64)


class TransitionKernel:
    """Row-stochastic table ``probs[s, a, s']``.

    Parameters
    ----------
    probs : array_like, shape (S, A, S)
        Nonnegative weights. Rows are normalised unless ``normalize`` is
        False, in which case they must already sum to one within 1e-9.
    normalize : bool, default True
    """

    __slots__ = ("probs",)

    def __init__(self, probs: ArrayLike, normalize: bool = True):
        p = np.array(probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"kernel must have shape (S, A, S), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("kernel contains non-finite entries")
        if np.any(p < 0):
            raise ValueError("kernel contains negative entries")
        sums = p.sum(axis=2, keepdims=True)
        if np.any(sums <= 0):
            raise ValueError("kernel has an all-zero row")
        if normalize:
            p = p / sums
        elif np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError("kernel rows do not sum to 1 within 1e-9")
        self.probs = _readonly(p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def apply(self, values: ArrayLike) -> NDArray[np.float64]:
        """Expected next value ``(P V)(s, a)`` for a vector over states."""
        return self.probs @ np.asarray(values, dtype=np.float64)

    def __eq__(self, other) -> bool:
        return isinstance(other, TransitionKernel) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"TransitionKernel(S={self.n_states}, A={self.n_actions})"


@dataclass(frozen=True, eq=False)
class EpisodicMdp:
    """Finite-horizon MDP with a fixed initial state.

    Parameters
    ----------
    reward : array_like, shape (S, A)
        Deterministic rewards in [0, 1].
    true_kernel : TransitionKernel or array_like
    horizon : int
    initial_state : int, default 0
    """

    reward: NDArray[np.float64]
    true_kernel: TransitionKernel
    horizon: int
    initial_state: int = 0
    _cum: NDArray[np.float64] = field(init=False, repr=False)

    def __post_init__(self):
        r = np.array(self.reward, dtype=np.float64)
        kern = self.true_kernel
        if not isinstance(kern, TransitionKernel):
            kern = TransitionKernel(kern)
        if r.ndim != 2:
            raise ValueError("reward must be a (S, A) table")
        if r.shape != kern.probs.shape[:2]:
            raise ValueError(f"reward shape {r.shape} does not match kernel {kern.probs.shape}")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be positive")
        if not 0 <= int(self.initial_state) < r.shape[0]:
            raise ValueError("initial_state out of range")
        object.__setattr__(self, "reward", _readonly(r))
        object.__setattr__(self, "true_kernel", kern)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "initial_state", int(self.initial_state))
        object.__setattr__(self, "_cum", _readonly(np.cumsum(kern.probs, axis=2)))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def with_kernel(self, kernel) -> "EpisodicMdp":
        return EpisodicMdp(self.reward, kernel, self.horizon, self.initial_state)


@dataclass(frozen=True)
class Policy:
    """Nonstationary deterministic policy, ``actions[h, s]``."""

    actions: NDArray[np.int64]

    def __post_init__(self):
        a = np.array(self.actions, dtype=np.int64)
        if a.ndim != 2:
            raise ValueError("policy table must be (H, S)")
        if np.any(a < 0):
            raise ValueError("negative action index")
        object.__setattr__(self, "actions", _readonly(a))

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def check(self, mdp: EpisodicMdp) -> None:
        if self.actions.shape != (mdp.horizon, mdp.n_states):
            raise ValueError("policy shape does not match the MDP")
        if np.any(self.actions >= mdp.n_actions):
            raise ValueError("policy action index out of range")


@dataclass(frozen=True)
class ValueTable:
    """State values ``values[h, s]`` for h = 0..H and optional Q-values."""

    values: NDArray[np.float64]
    q: NDArray[np.float64] | None = None

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def initial(self, state: int) -> float:
        return float(self.values[0, state])


@dataclass
class Trajectory:
    """One episode of length H."""

    states: NDArray[np.int64]
    actions: NDArray[np.int64]
    rewards: NDArray[np.float64]
    episode_index: int = 0

    @property
    def next_states(self) -> NDArray[np.int64]:
        return self.states[1:]

    @property
    def steps(self) -> list[tuple[int, int, float, int]]:
        return [
            (int(s), int(a), float(r), int(sp))
            for s, a, r, sp in zip(self.states[:-1], self.actions, self.rewards, self.states[1:])
        ]

    def __len__(self) -> int:
        return len(self.actions)


def sample_episode(mdp: EpisodicMdp, policy: Policy, rng: np.random.Generator,
                   episode_index: int = 0) -> Trajectory:
    """Roll out ``policy`` under the true kernel from the fixed initial state.

    Exactly ``H`` uniforms are drawn per episode, so a stream's position after
    ``k`` episodes does not depend on which states were visited.
    """
    u = rng.random(mdp.horizon)
    states, actions = kernels.sample_path(mdp._cum, policy.actions, mdp.initial_state, u)
    rewards = mdp.reward[states[:-1], actions]
    return Trajectory(states, actions, rewards, episode_index)


def value_iteration(kernel, reward: ArrayLike, horizon: int) -> tuple[ValueTable, Policy]:
    """Optimal values and a greedy policy by backward induction.

    Ties between actions go to the lowest index.
    """
    P = as_probs(kernel)
    r = np.asarray(reward, dtype=np.float64)
    Q, V, pi = kernels.backward_induction(P, r, int(horizon))
    return ValueTable(V, Q), Policy(pi)


def policy_value(kernel, reward: ArrayLike, policy: Policy) -> ValueTable:
    """Exact values of a fixed policy under ``kernel``."""
    P = as_probs(kernel)
    r = np.asarray(reward, dtype=np.float64)
    V = kernels.evaluate_policy(P, r, policy.actions)
    return ValueTable(V)


@dataclass
class EpisodeRecord:
    episode: int
    epoch: int
    phase: str
    policy: NDArray[np.int64]
    states: NDArray[np.int64]
    actions: NDArray[np.int64]
    v_star: float
    v_pi: float
    instant_regret: float
    cum_regret: float
    selected_class: int | None = None
    active_coords: tuple[int, ...] | None = None
    b_estimate: float | None = None
    beta: float | None = None
    lambda_min: float | None = None
    covered: bool | None = None


class RunLedger:
    """Episode-indexed record of a run.

    ``V*_1(s_1)`` is computed once at construction from the true kernel.
    Epoch-level records (selection statistics, support sets, norm estimates)
    live in ``epochs`` as plain dictionaries.
    """

    def __init__(self, mdp: EpisodicMdp, keep_values: bool = True):
        self.mdp = mdp
        vt, pol = value_iteration(mdp.true_kernel, mdp.reward, mdp.horizon)
        self.optimal = vt
        self.optimal_policy = pol
        self.v_star = vt.initial(mdp.initial_state)
        self.episodes: list[EpisodeRecord] = []
        self.epochs: list[dict[str, Any]] = []
        self.keep_values = keep_values
        self.value_functions: list[NDArray[np.float64]] = []
        self.anomalies: list[str] = []
        self._cum = 0.0

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def cumulative_regret(self) -> float:
        return self._cum

    def regret_curve(self) -> NDArray[np.float64]:
        return np.array([e.cum_regret for e in self.episodes])

    def instant_regrets(self) -> NDArray[np.float64]:
        return np.array([e.instant_regret for e in self.episodes])

    def record(self, policy: Policy, trajectory: Trajectory | None = None, *, epoch: int = 0,
               phase: str = "", values: NDArray | None = None, **extra) -> EpisodeRecord:
        v_pi = policy_value(self.mdp.true_kernel, self.mdp.reward, policy).initial(self.mdp.initial_state)
        # rounding can make the gap of an optimal policy a hair negative
        inc = max(self.v_star - v_pi, 0.0)
        self._cum += inc
        rec = EpisodeRecord(
            episode=len(self.episodes) + 1,
            epoch=epoch,
            phase=phase,
            policy=policy.actions,
            states=trajectory.states if trajectory is not None else np.empty(0, np.int64),
            actions=trajectory.actions if trajectory is not None else np.empty(0, np.int64),
            v_star=self.v_star,
            v_pi=v_pi,
            instant_regret=inc,
            cum_regret=self._cum,
            **extra,
        )
        self.episodes.append(rec)
        if values is not None and self.keep_values:
            self.value_functions.append(np.asarray(values))
        return rec


def record_regret(ledger: RunLedger, mdp: EpisodicMdp, policy: Policy, **kw) -> RunLedger:
    """Append the pseudo-regret of ``policy`` to ``ledger`` and return it."""
    if mdp is not ledger.mdp:
        raise ValueError("ledger was built for a different MDP")
    ledger.record(policy, **kw)
    return ledger


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def mdp_to_dict(mdp: EpisodicMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "horizon": mdp.horizon,
        "initial_state": mdp.initial_state,
        "reward": mdp.reward.tolist(),
        "kernel": mdp.true_kernel.probs.tolist(),
    }


def mdp_from_dict(doc: dict) -> EpisodicMdp:
    mdp = EpisodicMdp(
        np.array(doc["reward"], dtype=np.float64),
        TransitionKernel(np.array(doc["kernel"], dtype=np.float64), normalize=False),
        int(doc["horizon"]),
        int(doc.get("initial_state", 0)),
    )
    if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
        raise ValueError("declared sizes do not match the tables")
    return mdp


def save_mdp(mdp: EpisodicMdp, path) -> None:
    with open(path, "w") as fh:
        json.dump(mdp_to_dict(mdp), fh)


def load_mdp(path) -> EpisodicMdp:
    with open(path) as fh:
        return mdp_from_dict(json.load(fh))


def random_mdp(n_states: int, n_actions: int, horizon: int, rng: np.random.Generator,
               concentration: float = 1.0, initial_state: int = 0) -> EpisodicMdp:
    """Random instance with Dirichlet rows and uniform rewards."""
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    r = rng.random((n_states, n_actions))
    return EpisodicMdp(r, TransitionKernel(P), horizon, initial_state)
