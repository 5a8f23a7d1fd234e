"""Assumption checkers and brute-force oracles.

* eluder dimension of small function classes by exhaustive subset search;
* a martingale audit of the value-target noise against its Azuma envelope;
* a minimum-eigenvalue estimate for feature second moments over value
  functions the ridge learner can produce;
* a check of the affine growth of the ridge Gram matrix's smallest
  eigenvalue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import kernels
from .linear import LinearKernelMdp, integrate_features
from .mdp import as_probs

MAX_ELUDER_INPUTS = 12
MAX_ELUDER_FUNCTIONS = 12


class EluderSizeError(ValueError):
    """Class too large for exhaustive search."""


@dataclass
class FunctionClassSample:
    """Finite function class given by its evaluation table.

    Parameters
    ----------
    table : array_like, shape (n_functions, n_inputs)
    epsilon : float
        Scale, must be positive.
    inputs : list, optional
        Labels for the inputs; purely descriptive.
    """

    table: NDArray[np.float64]
    epsilon: float
    inputs: list | None = None

    def __post_init__(self):
        self.table = np.atleast_2d(np.asarray(self.table, dtype=np.float64))
        if self.table.size == 0:
            raise ValueError("function class must be nonempty")
        if not np.all(np.isfinite(self.table)):
            raise ValueError("evaluation table must be finite")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.inputs is not None and len(self.inputs) != self.table.shape[1]:
            raise ValueError("one label per input")

    @property
    def n_functions(self) -> int:
        return self.table.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.table.shape[1]


def pair_differences(table: NDArray) -> NDArray[np.float64]:
    """Row differences ``f_i - f_j`` for every unordered pair ``i < j``."""
    n = table.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    return np.ascontiguousarray(table[iu] - table[ju])


def eluder_levels(diff: NDArray, epsilon: float, strict: bool = True) -> NDArray[np.float64]:
    """Candidate scales: realized gap magnitudes above (or at) ``epsilon``."""
    g = np.unique(np.abs(diff))
    keep = g > epsilon if strict else g >= epsilon
    return np.ascontiguousarray(g[keep])


def eluder_dimension(cls: FunctionClassSample, strict: bool = True) -> int:
    """Length of the longest sequence of inputs each independent of its predecessors.

    An input extends a prefix at scale ``eps' >= epsilon`` when some pair of
    functions has accumulated squared gap at most ``eps'**2`` on the prefix
    and gap above ``eps'`` on the new input. With ``strict=False`` the gap
    only needs to reach ``eps'``.

    Feasibility at a scale depends on the smallest gap used, so only realized
    gap magnitudes need to be tried as scales. Accumulated gaps depend on the
    set of inputs and not on their order, which reduces the search to a DP
    over subsets.

    Raises
    ------
    EluderSizeError
        Beyond 12 inputs or 12 functions.
    """
    if cls.n_inputs > MAX_ELUDER_INPUTS or cls.n_functions > MAX_ELUDER_FUNCTIONS:
        raise EluderSizeError(
            f"exhaustive search limited to {MAX_ELUDER_INPUTS} inputs and {MAX_ELUDER_FUNCTIONS} functions"
        )
    if cls.n_functions < 2:
        return 0
    diff = pair_differences(cls.table)
    levels = eluder_levels(diff, cls.epsilon, strict)
    if levels.size == 0:
        return 0
    return int(kernels.eluder_longest(diff, levels, bool(strict)))


@dataclass
class MartingaleAudit:
    """Squared-residual martingale check for one run.

    Attributes
    ----------
    increments : ndarray
        Centred squared residuals ``m - E[m | past]``.
    running : ndarray
        Prefix sums of ``increments``.
    envelope : ndarray
        ``H^2 sqrt(2 n log(2/delta))`` at each prefix length ``n``.
    violations : int
        Prefixes where ``|running| > envelope``.
    sigma2_hat : float
        Mean squared residual.
    sigma2_exact : float
        Mean conditional variance at the visited pairs.
    """

    increments: NDArray[np.float64]
    running: NDArray[np.float64]
    envelope: NDArray[np.float64]
    violations: int
    sigma2_hat: float
    sigma2_exact: float

    @property
    def violation_rate(self) -> float:
        n = self.running.size
        return self.violations / n if n else 0.0

    @property
    def violated(self) -> bool:
        return self.violations > 0


def azuma_envelope(n: ArrayLike, horizon: int, delta: float) -> NDArray[np.float64]:
    """``H^2 sqrt(2 n log(2/delta))`` for prefix lengths ``n``."""
    n = np.asarray(n, dtype=np.float64)
    return horizon**2 * np.sqrt(2.0 * n * math.log(2.0 / delta))


def audit_value_target_martingale(states, actions, values, targets, true_kernel, horizon: int,
                                  delta: float) -> MartingaleAudit:
    """Audit squared value-target residuals against their exact conditional means.

    The arguments are the regression records in the order they were
    collected, e.g. the arrays of a :class:`~arlab.ucrl_vtr.VtrDataset`.
    """
    P = as_probs(true_kernel)
    s = np.asarray(states, dtype=np.int64)
    a = np.asarray(actions, dtype=np.int64)
    V = np.atleast_2d(np.asarray(values, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64)
    if s.size == 0:
        empty = np.zeros(0)
        return MartingaleAudit(empty, empty, empty, 0, 0.0, 0.0)
    rows = P[s, a]
    mean = np.einsum("np,np->n", rows, V)
    var = np.einsum("np,np->n", rows, (V - mean[:, None]) ** 2)
    m = (y - mean) ** 2
    inc = m - var
    running = np.cumsum(inc)
    env = azuma_envelope(np.arange(1, s.size + 1), horizon, delta)
    viol = int(np.sum(np.abs(running) > env))
    return MartingaleAudit(inc, running, env, viol, float(m.mean()), float(var.mean()))


def audit_dataset(data, true_kernel, delta: float) -> MartingaleAudit:
    return audit_value_target_martingale(data.states, data.actions, data.values, data.targets,
                                         true_kernel, data.horizon, delta)


@dataclass
class ValueClassSampler:
    """Random members of the optimistic value-function class.

    Each sample is ``s -> min(H, max_a r + <psi, theta> + eta ||psi||_W)``
    where ``psi`` is the integrated feature of a random value vector, scaled
    so its largest norm is one, ``theta`` is Gaussian with per-coordinate
    scale ``theta_scale`` (default ``1/sqrt(d)``), ``W = B B^T / d`` with Gaussian ``B`` and ``eta``
    uniform on ``(0, eta_max)``.
    """

    theta_scale: float | None = None
    eta_max: float = 1.0

    def __call__(self, mdp: LinearKernelMdp, rng: np.random.Generator) -> NDArray[np.float64]:
        H = mdp.horizon
        d = mdp.dimension
        S = mdp.base.n_states
        psi = integrate_features(mdp, rng.uniform(0.0, H, size=S))
        top = np.sqrt((psi**2).sum(axis=-1)).max()
        if top > 0:
            psi = psi / top
        scale = self.theta_scale if self.theta_scale is not None else 1.0 / math.sqrt(d)
        theta = rng.normal(0.0, scale, size=d)
        B = rng.normal(size=(d, d))
        W = B @ B.T / d
        eta = rng.uniform(0.0, self.eta_max)
        bonus = np.sqrt(np.maximum(np.einsum("sad,de,sae->sa", psi, W, psi), 0.0))
        q = mdp.base.reward + psi @ theta + eta * bonus
        return np.minimum(q.max(axis=1), H)


def feature_moment(mdp: LinearKernelMdp, values: ArrayLike, visitation=None) -> NDArray[np.float64]:
    """``E[phi_V phi_V^T]`` under a state-action visitation (uniform by default)."""
    f = integrate_features(mdp, values)
    S, A, d = f.shape
    nu = np.full((S, A), 1.0 / (S * A)) if visitation is None else np.asarray(visitation, dtype=np.float64)
    nu = nu / nu.sum()
    return np.einsum("sa,sad,sae->de", nu, f, f)


@dataclass
class RhoEstimate:
    value: float
    per_sample: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))


def estimate_rho_min(mdp: LinearKernelMdp, n_samples: int, rng: np.random.Generator,
                     sampler=None, visitation=None, details: bool = False):
    """Smallest moment eigenvalue over sampled value functions.

    Samples are drawn sequentially, so with the same seed a larger
    ``n_samples`` extends the earlier sample and the estimate cannot grow.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    sampler = sampler if sampler is not None else ValueClassSampler()
    lams = np.empty(n_samples)
    for i in range(n_samples):
        V = sampler(mdp, rng)
        lams[i] = np.linalg.eigvalsh(feature_moment(mdp, V, visitation))[0]
    lams = np.maximum(lams, 0.0)
    est = float(lams.min())
    return RhoEstimate(est, lams) if details else est


def rho_from_values(mdp: LinearKernelMdp, values, visitation=None, details: bool = False):
    """Smallest moment eigenvalue over explicit value functions.

    Meant for the value tables a learner actually produced. Identically zero
    rows, such as the terminal value, are skipped: they carry no feature
    and would pin the estimate at zero.
    """
    V = np.atleast_2d(np.asarray(values, dtype=np.float64))
    V = V[np.any(V != 0.0, axis=1)]
    if V.shape[0] == 0:
        raise ValueError("need at least one nonzero value function")
    V = np.unique(V, axis=0)
    lams = np.array([np.linalg.eigvalsh(feature_moment(mdp, v, visitation))[0] for v in V])
    lams = np.maximum(lams, 0.0)
    est = float(lams.min())
    return RhoEstimate(est, lams) if details else est


def tau_min(rho: float, d: int, n_episodes: int, horizon: int, delta: float) -> float:
    """Episodes after which the eigenvalue growth bound is claimed."""
    if rho <= 0:
        return math.inf
    return (16.0 / rho**2 + 8.0 / (3.0 * rho)) * math.log(2.0 * d * n_episodes * horizon / delta)


@dataclass
class EigenGrowthReport:
    tau_min: float
    checked: int
    violations: int
    flagged: list

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.checked if self.checked else 0.0


def check_eigen_growth(history, rho_hat: float, horizon: int, delta: float, d: int,
                       n_episodes: int | None = None) -> EigenGrowthReport:
    """Flag episodes past ``tau_min`` whose Gram eigenvalue is below ``1 + rho k H / 2``.

    ``history`` is a sequence of ``(k, lambda_min)`` pairs.
    """
    hist = [(int(k), float(lam)) for k, lam in history]
    if not hist:
        raise ValueError("history must be nonempty")
    K = max(k for k, _ in hist) if n_episodes is None else n_episodes
    tm = tau_min(rho_hat, d, K, horizon, delta)
    flagged = []
    checked = 0
    for k, lam in hist:
        if k < tm:
            continue
        checked += 1
        if lam < 1.0 + rho_hat * k * horizon / 2.0:
            flagged.append(k)
    return EigenGrowthReport(tm, checked, len(flagged), flagged)
