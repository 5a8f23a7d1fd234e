"""Value-targeted regression over a finite kernel family.

The learner regresses realized next-state values of its own value functions
onto each candidate kernel's predictions, keeps every kernel whose
prediction gap to the best fit stays within a log-cardinality width, and
plans with the most optimistic survivor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import kernels
from .mdp import EpisodicMdp, Policy, RunLedger, ValueTable, as_probs, sample_episode


class VtrDataset:
    """Growable store of regression tuples ``(s, a, V, y)``.

    ``V`` is the value vector the learner held for the next step and ``y``
    is its value at the realized next state.
    """

    def __init__(self, n_states: int, horizon: int, capacity: int = 256):
        self.n_states = n_states
        self.horizon = horizon
        self._s = np.empty(capacity, dtype=np.int64)
        self._a = np.empty(capacity, dtype=np.int64)
        self._v = np.empty((capacity, n_states))
        self._y = np.empty(capacity)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    @property
    def n_episodes(self) -> int:
        return self._n // self.horizon

    def _grow(self, need: int) -> None:
        cap = len(self._y)
        if need <= cap:
            return
        new = max(need, 2 * cap)
        for name in ("_s", "_a", "_v", "_y"):
            old = getattr(self, name)
            arr = np.empty((new,) + old.shape[1:], dtype=old.dtype)
            arr[: self._n] = old[: self._n]
            setattr(self, name, arr)

    def append(self, s: int, a: int, values: NDArray, y: float) -> None:
        if not 0.0 <= y <= self.horizon + 1e-9:
            raise ValueError(f"target {y} outside [0, H]")
        self._grow(self._n + 1)
        self._s[self._n] = s
        self._a[self._n] = a
        self._v[self._n] = values
        self._y[self._n] = y
        self._n += 1

    @property
    def states(self) -> NDArray[np.int64]:
        return self._s[: self._n]

    @property
    def actions(self) -> NDArray[np.int64]:
        return self._a[: self._n]

    @property
    def values(self) -> NDArray[np.float64]:
        return self._v[: self._n]

    @property
    def targets(self) -> NDArray[np.float64]:
        return self._y[: self._n]

    def head(self, n: int) -> "VtrDataset":
        """Copy of the first ``n`` records."""
        out = VtrDataset(self.n_states, self.horizon, max(n, 1))
        out._s[:n] = self._s[:n]
        out._a[:n] = self._a[:n]
        out._v[:n] = self._v[:n]
        out._y[:n] = self._y[:n]
        out._n = n
        return out

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "horizon": self.horizon,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "values": self.values.tolist(),
            "targets": self.targets.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VtrDataset":
        out = cls(doc["n_states"], doc["horizon"], max(len(doc["targets"]), 1))
        for s, a, v, y in zip(doc["states"], doc["actions"], doc["values"], doc["targets"]):
            out.append(s, a, np.asarray(v, dtype=np.float64), y)
        return out


def predictions(data: VtrDataset, kernel) -> NDArray[np.float64]:
    """``(P V_j)(s_j, a_j)`` for every record ``j``."""
    P = as_probs(kernel)
    rows = P[data.states, data.actions]
    return np.einsum("np,np->n", rows, data.values)


def empirical_loss(data: VtrDataset, kernel) -> float:
    """Sum of squared residuals of the kernel's predictions."""
    if len(data) == 0:
        return 0.0
    return float(np.sum((data.targets - predictions(data, kernel)) ** 2))


def pairwise_loss(data: VtrDataset, p, q) -> float:
    """Sum of squared prediction gaps between two kernels."""
    if len(data) == 0:
        return 0.0
    return float(np.sum((predictions(data, p) - predictions(data, q)) ** 2))


def family_losses(data: VtrDataset, family) -> NDArray[np.float64]:
    fam = np.asarray([as_probs(k) for k in family]) if not isinstance(family, np.ndarray) else family
    if len(data) == 0:
        return np.zeros(len(fam))
    rows = fam[:, data.states, data.actions]  # (N, n, S)
    pred = np.einsum("knp,np->kn", rows, data.values)
    return np.sum((data.targets[None] - pred) ** 2, axis=1)


def fit_kernel(data: VtrDataset, family) -> int:
    """Index of the loss minimiser, lowest index on ties."""
    if len(family) == 0:
        raise ValueError("family must be nonempty")
    return int(np.argmin(family_losses(data, family)))


def beta_finite(family_size: int, horizon: int, delta: float) -> float:
    """Confidence width ``8 H^2 log(|family| / delta)`` for a finite family."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if family_size < 1:
        raise ValueError("family_size must be positive")
    return 8.0 * horizon**2 * math.log(family_size / delta)


@dataclass
class FiniteConfidenceSet:
    """Members of a finite family consistent with the data.

    Attributes
    ----------
    family : ndarray, shape (N, S, A, S)
    member_flags : ndarray of bool, shape (N,)
    center : int
        Index of the loss minimiser.
    width : float
    """

    family: NDArray[np.float64]
    member_flags: NDArray[np.bool_]
    center: int
    width: float

    @property
    def members(self) -> NDArray[np.int64]:
        return np.flatnonzero(self.member_flags)


def build_confidence_set(data: VtrDataset, family, delta: float) -> FiniteConfidenceSet:
    fam = np.asarray([as_probs(k) for k in family])
    center = fit_kernel(data, fam)
    width = beta_finite(len(fam), data.horizon, delta)
    gaps = np.array([pairwise_loss(data, fam[i], fam[center]) for i in range(len(fam))])
    flags = gaps <= width
    flags[center] = True
    return FiniteConfidenceSet(fam, flags, center, width)


def optimistic_plan(confidence_set: FiniteConfidenceSet, reward, horizon: int,
                    initial_state: int, optimal=None) -> tuple[int, ValueTable, Policy]:
    """Member kernel with the largest optimal initial value, its values and policy.

    ``optimal`` may carry precomputed ``(Q, V, pi)`` stacks for the whole
    family; otherwise every member is solved here.
    """
    members = confidence_set.members
    if members.size == 0:
        raise ValueError("confidence set has no members")
    if optimal is None:
        fam = np.ascontiguousarray(confidence_set.family[members])
        Q, V, pi = kernels.backward_induction_batch(fam, np.asarray(reward, float), horizon)
        j = int(np.argmax(V[:, 0, initial_state]))
        return int(members[j]), ValueTable(V[j], Q[j]), Policy(pi[j])
    Q, V, pi = optimal
    j = int(members[np.argmax(V[members, 0, initial_state])])
    return j, ValueTable(V[j], Q[j]), Policy(pi[j])


class LossTracker:
    """Incremental losses for every kernel of a pool.

    Keeps ``loss[i]`` and the symmetric matrix ``gap[i, j]`` of summed
    squared prediction differences, so confidence sets for any prefix family
    cost O(N) per episode.
    """

    def __init__(self, pool: NDArray):
        self.pool = pool
        n = pool.shape[0]
        self.loss = np.zeros(n)
        self.gap = np.zeros((n, n))

    def add(self, s: int, a: int, values: NDArray, y: float) -> None:
        pred = self.pool[:, s, a, :] @ values
        self.loss += (y - pred) ** 2
        diff = pred[:, None] - pred[None, :]
        self.gap += diff * diff

    def confidence_set(self, size: int, horizon: int, delta: float) -> FiniteConfidenceSet:
        center = int(np.argmin(self.loss[:size]))
        width = beta_finite(size, horizon, delta)
        flags = self.gap[center, :size] <= width
        flags[center] = True
        return FiniteConfidenceSet(self.pool[:size], flags, center, width)


class UcrlVtr:
    """Finite-family learner over a kernel pool with a shared dataset.

    ``play`` runs episodes against any prefix of the pool, which is how the
    model-selection wrapper reuses one dataset across epochs.

    Parameters
    ----------
    mdp : EpisodicMdp
    pool : array_like, shape (N, S, A, S)
    dataset : VtrDataset, optional
    true_index : int, optional
        Pool position of the true kernel; enables coverage flags.
    """

    def __init__(self, mdp: EpisodicMdp, pool, dataset: VtrDataset | None = None,
                 true_index: int | None = None):
        self.mdp = mdp
        self.pool = np.ascontiguousarray(np.asarray([as_probs(k) for k in pool]))
        self.data = dataset if dataset is not None else VtrDataset(mdp.n_states, mdp.horizon)
        self.tracker = LossTracker(self.pool)
        for s, a, v, y in zip(self.data.states, self.data.actions, self.data.values, self.data.targets):
            self.tracker.add(s, a, v, y)
        self.optimal = kernels.backward_induction_batch(self.pool, np.asarray(mdp.reward), mdp.horizon)
        self.true_index = true_index

    def confidence_set(self, family_size: int, delta: float) -> FiniteConfidenceSet:
        return self.tracker.confidence_set(family_size, self.mdp.horizon, delta)

    def play(self, ledger: RunLedger, rng: np.random.Generator, episodes: int, delta: float,
             family_size: int | None = None, epoch: int = 0, selected_class: int | None = None) -> None:
        mdp = self.mdp
        H = mdp.horizon
        size = self.pool.shape[0] if family_size is None else family_size
        _, V, pi = self.optimal
        cs = self.confidence_set(size, delta)
        for _ in range(episodes):
            idx, _, policy = optimistic_plan(cs, mdp.reward, H, mdp.initial_state, self.optimal)
            traj = sample_episode(mdp, policy, rng, len(ledger) + 1)
            values = V[idx]
            for h in range(H):
                nxt = values[h + 1]
                y = float(nxt[traj.states[h + 1]])
                self.data.append(int(traj.states[h]), int(traj.actions[h]), nxt, y)
                self.tracker.add(int(traj.states[h]), int(traj.actions[h]), nxt, y)
            width = cs.width
            cs = self.confidence_set(size, delta)
            covered = None
            if self.true_index is not None and self.true_index < size:
                covered = bool(cs.member_flags[self.true_index])
            ledger.record(policy, traj, epoch=epoch, phase="ucrl", values=values,
                          selected_class=selected_class, beta=width, covered=covered)


def run_ucrl_vtr(mdp: EpisodicMdp, family, episodes: int, delta: float, rng: np.random.Generator,
                 ledger: RunLedger | None = None, dataset: VtrDataset | None = None,
                 true_index: int | None = None) -> RunLedger:
    """Run the finite-family learner for ``episodes`` episodes."""
    ledger = ledger if ledger is not None else RunLedger(mdp)
    learner = UcrlVtr(mdp, family, dataset, true_index)
    learner.play(ledger, rng, episodes, delta)
    return ledger


def coverage_held(ledger: RunLedger) -> bool:
    """True when the true kernel stayed in every recorded confidence set."""
    flags = [e.covered for e in ledger.episodes if e.covered is not None]
    return all(flags)
