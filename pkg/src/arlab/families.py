"""Nested finite model families with a prescribed realizable index.

Families are stored as one pool of kernels plus nested prefix sizes, so
family ``m`` is literally the first ``sizes[m-1]`` kernels of the pool and
nesting holds by identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import kernels
from .mdp import EpisodicMdp, as_probs

DEFAULT_BUDGET = 100_000


class GenerationError(RuntimeError):
    """Raised when rejection sampling exhausts its candidate budget."""


@dataclass(frozen=True, eq=False)
class NestedModelFamilies:
    """Chain of finite kernel families ``F_1 ⊂ ... ⊂ F_M``.

    Parameters
    ----------
    pool : ndarray, shape (N, S, A, S)
        All kernels of the largest family, ordered so that every family is a
        prefix.
    sizes : tuple of int
        Family sizes, nondecreasing, ``sizes[-1] == N``.
    realizable_index : int
        1-based index ``m*`` of the smallest family holding the true kernel.
    true_index : int
        Position of the true kernel in the pool.
    separation : float
        Separation the generator was asked to certify.
    probe_values : ndarray, shape (n, S)
        Value functions used as separation witnesses.
    """

    pool: NDArray[np.float64]
    sizes: tuple[int, ...]
    realizable_index: int
    true_index: int
    separation: float = 0.0
    probe_values: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        pool = np.array(self.pool, dtype=np.float64)
        pool.setflags(write=False)
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "pool", pool)
        object.__setattr__(self, "sizes", sizes)
        if not sizes or sizes[0] < 1 or any(b < a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("family sizes must be positive and nondecreasing")
        if sizes[-1] != pool.shape[0]:
            raise ValueError("largest family must hold the whole pool")
        m = self.realizable_index
        if not 1 <= m <= len(sizes):
            raise ValueError("realizable index out of range")
        lo = sizes[m - 2] if m > 1 else 0
        if not lo <= self.true_index < sizes[m - 1]:
            raise ValueError("true kernel must enter exactly at the realizable family")

    @property
    def n_families(self) -> int:
        return len(self.sizes)

    @property
    def n_nonrealizable(self) -> int:
        m = self.realizable_index
        return self.sizes[m - 2] if m > 1 else 0

    def family(self, m: int) -> NDArray[np.float64]:
        """Kernels of family ``m`` (1-based) as a view into the pool."""
        return self.pool[: self.sizes[m - 1]]

    def contains(self, m: int, kernel) -> bool:
        P = as_probs(kernel)
        return any(np.array_equal(P, K) for K in self.family(m))

    @property
    def true_kernel(self) -> NDArray[np.float64]:
        return self.pool[self.true_index]

    def to_dict(self) -> dict:
        return {
            "pool": self.pool.tolist(),
            "sizes": list(self.sizes),
            "realizable_index": self.realizable_index,
            "true_index": self.true_index,
            "separation": self.separation,
            "probe_values": np.asarray(self.probe_values).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NestedModelFamilies":
        return cls(
            np.array(doc["pool"]),
            tuple(doc["sizes"]),
            int(doc["realizable_index"]),
            int(doc["true_index"]),
            float(doc.get("separation", 0.0)),
            np.array(doc.get("probe_values", []), dtype=np.float64).reshape(-1, len(doc["pool"][0])),
        )


@dataclass
class SeparationReport:
    """Squared prediction gaps of non-realizable kernels.

    ``entries[i, j]`` is the minimum over (s, a) of the squared gap between
    non-realizable kernel ``i`` and the true kernel on value function ``j``.
    """

    entries: NDArray[np.float64]
    min_gap: float

    @property
    def is_empty(self) -> bool:
        return self.entries.size == 0


def optimal_values(pool: NDArray, reward: NDArray, horizon: int) -> NDArray[np.float64]:
    """Optimal value tables of every kernel, shape (N, H+1, S)."""
    _, V, _ = kernels.backward_induction_batch(np.ascontiguousarray(pool), np.asarray(reward, float), horizon)
    return V


def _nonconstant(values: NDArray, tol: float = 1e-12) -> NDArray:
    values = np.atleast_2d(values)
    keep = np.ptp(values, axis=1) > tol
    return values[keep]


def default_probes(pool: NDArray, reward: NDArray, horizon: int) -> NDArray[np.float64]:
    """Non-constant optimal value functions of every kernel, deduplicated."""
    V = optimal_values(pool, reward, horizon)[:, :horizon]
    probes = _nonconstant(V.reshape(-1, V.shape[-1]))
    return np.unique(probes, axis=0) if probes.size else probes


def squared_gaps(kernel: NDArray, true_kernel: NDArray, values: NDArray) -> NDArray[np.float64]:
    """Squared gaps ``((P V)(s,a) - (P* V)(s,a))^2`` of shape (n_values, S, A)."""
    diff = np.asarray(kernel) - np.asarray(true_kernel)
    return np.einsum("sap,np->nsa", diff, np.atleast_2d(values)) ** 2


def verify_separation(families: NestedModelFamilies, true_kernel, value_functions) -> SeparationReport:
    """Exhaustive scan of every non-realizable kernel against ``value_functions``.

    With no non-realizable kernels the report is empty and the minimum is
    +inf.
    """
    P_star = as_probs(true_kernel)
    n_bad = families.n_nonrealizable
    values = np.atleast_2d(np.asarray(value_functions, dtype=np.float64))
    if n_bad == 0 or values.size == 0:
        return SeparationReport(np.zeros((n_bad, 0 if values.size == 0 else values.shape[0])), float("inf"))
    entries = np.empty((n_bad, values.shape[0]))
    for i in range(n_bad):
        entries[i] = squared_gaps(families.pool[i], P_star, values).min(axis=(1, 2))
    return SeparationReport(entries, float(entries.min()))


def _row_margin(row: NDArray, star_row: NDArray, probes: NDArray) -> float:
    if probes.size == 0:
        return np.inf
    return float(np.min((probes @ (row - star_row)) ** 2))


def build_nested_families(mdp: EpisodicMdp, M: int, m_star: int, target_delta: float,
                          sizes, rng: np.random.Generator, probe_values=None,
                          tv_radius: float = 0.2, concentration: float = 0.5,
                          proposal: str = "dirichlet", tilt: float = 4.0, budget: int = DEFAULT_BUDGET,
                          max_rounds: int = 50) -> NestedModelFamilies:
    """Generate nested families around the MDP's true kernel.

    Kernels below the realizable family are drawn row by row from a
    Dirichlet proposal and kept only if every row clears ``target_delta``
    against every probe. The true kernel opens family ``m_star`` and the
    remaining slots hold distractors within total-variation ``tv_radius`` of
    it.

    When ``probe_values`` is None the probes are the optimal value functions
    of every kernel in the largest family. Those depend on the generated
    kernels, so generation repeats until the probe set stops changing the
    outcome. Constant probes are dropped because no kernel can separate on
    them.

    ``proposal='pessimistic'`` tilts the Dirichlet proposal towards states
    with low optimal value under the true kernel (weight growing linearly in
    the value rank, up to ``1 + tilt``), which keeps the generated kernels'
    own value functions far from constant.

    Raises
    ------
    GenerationError
        If more than ``budget`` candidate rows are drawn.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != M:
        raise ValueError("need one size per family")
    if not 1 <= m_star <= M:
        raise ValueError("m_star must lie in [1, M]")
    if any(b < a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
        raise ValueError("sizes must be positive and nondecreasing")
    n_bad = sizes[m_star - 2] if m_star > 1 else 0
    n_total = sizes[-1]
    if n_total <= n_bad:
        raise ValueError("family m_star must be strictly larger than family m_star - 1")

    P_star = mdp.true_kernel.probs
    S, A = mdp.n_states, mdp.n_actions
    pool = np.empty((n_total, S, A, S))
    pool[n_bad] = P_star
    # distractors near the true kernel: (1 - lam) P* + lam U keeps TV <= lam
    for i in range(n_bad + 1, n_total):
        lam = rng.uniform(0.25, 1.0) * tv_radius
        U = rng.dirichlet(np.ones(S), size=(S, A))
        pool[i] = (1 - lam) * P_star + lam * U

    fixed = probe_values is not None
    probes = _nonconstant(np.asarray(probe_values, dtype=np.float64)) if fixed else np.zeros((0, S))
    if not fixed:
        probes = default_probes(pool[n_bad:], mdp.reward, mdp.horizon)

    drawn = 0
    if proposal == "dirichlet":
        alpha = np.full(S, concentration)
    elif proposal == "pessimistic":
        v1 = optimal_values(P_star[None], mdp.reward, mdp.horizon)[0, 0]
        rank = np.argsort(np.argsort(-v1))  # 0 for the best state
        alpha = concentration * (1.0 + tilt * rank / max(S - 1, 1))
    else:
        raise ValueError(f"unknown proposal {proposal!r}")

    def draw_row(s, a, probes):
        nonlocal drawn
        while True:
            if drawn >= budget:
                raise GenerationError(
                    f"no row cleared separation {target_delta} within {budget} candidates"
                )
            drawn += 1
            row = rng.dirichlet(alpha)
            if _row_margin(row, P_star[s, a], probes) >= target_delta:
                return row

    for i in range(n_bad):
        for s in range(S):
            for a in range(A):
                pool[i, s, a] = draw_row(s, a, probes)

    rounds = 0
    while not fixed and n_bad > 0:
        new = default_probes(pool, mdp.reward, mdp.horizon)
        probes = np.unique(np.vstack([probes, new]), axis=0)
        clean = True
        for i in range(n_bad):
            for s in range(S):
                for a in range(A):
                    if _row_margin(pool[i, s, a], P_star[s, a], probes) < target_delta:
                        pool[i, s, a] = draw_row(s, a, probes)
                        clean = False
        if clean:
            break
        rounds += 1
        if rounds >= max_rounds:
            raise GenerationError("probe set did not stabilise")

    return NestedModelFamilies(pool, sizes, m_star, n_bad, float(target_delta), probes)
