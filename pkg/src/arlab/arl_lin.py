"""Model selection for linear kernel MDPs.

Two wrappers around the ridge learner:

* dimension adaptation alternates a regret phase, run by a fresh learner
  restricted to the currently believed support, with a support phase that
  advances one persistent full-dimensional learner whose estimate is then
  thresholded;
* norm adaptation runs doubling epochs and replaces the norm bound with the
  largest norm compatible with the epoch's final confidence ellipsoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .linear import (
    ConfidenceEllipsoid,
    LinearKernelMdp,
    RidgeState,
    ellipsoid_of,
    min_eigenvalue,
    run_ucrl_vtr_lin,
)
from .mdp import RunLedger

VARIANTS = ("literal", "remark")


@dataclass(frozen=True)
class DimSchedule:
    """Phase lengths and threshold of epoch ``i >= 0``.

    ``literal`` uses regret phases ``36**i * k0``, support phases
    ``6**i * ceil(sqrt(k0))`` and threshold ``0.5**(i+1)``; ``remark`` uses
    ``4**i * k0``, ``2**i * ceil(sqrt(k0))`` and ``0.9**i``.
    """

    epoch: int
    k0: int
    delta: float
    variant: str = "literal"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown schedule variant {self.variant!r}")
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")

    @property
    def _bases(self) -> tuple[int, int]:
        return (36, 6) if self.variant == "literal" else (4, 2)

    @property
    def regret_episodes(self) -> int:
        return self._bases[0] ** self.epoch * self.k0

    @property
    def support_episodes(self) -> int:
        return self._bases[1] ** self.epoch * ceil_sqrt(self.k0)

    @property
    def epoch_delta(self) -> float:
        return self.delta / 2**self.epoch

    @property
    def cumulative_support(self) -> int:
        """Support-phase episodes up to and including this epoch."""
        return sum(DimSchedule(j, self.k0, self.delta, self.variant).support_episodes
                   for j in range(self.epoch + 1))

    @property
    def threshold(self) -> float:
        return 0.5 ** (self.epoch + 1) if self.variant == "literal" else 0.9**self.epoch


def ceil_sqrt(n: int) -> int:
    """Exact integer ``ceil(sqrt(n))``."""
    r = math.isqrt(n)
    return r if r * r == n else r + 1


def threshold_support(theta_hat, epoch: int, threshold: float | None = None,
                      anomalies: list | None = None) -> NDArray[np.int64]:
    """Coordinates whose estimate clears the epoch threshold.

    The default threshold is ``0.5**(epoch+1)``. An empty result falls back
    to the largest coordinate in magnitude.
    """
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    t = 0.5 ** (epoch + 1) if threshold is None else threshold
    D = np.flatnonzero(np.abs(theta_hat) >= t)
    if D.size == 0:
        if anomalies is not None:
            anomalies.append(f"epoch {epoch}: empty support, keeping the largest coordinate")
        D = np.array([int(np.argmax(np.abs(theta_hat)))])
    return D


def support_lock_in(supports, truth) -> dict:
    """First epoch whose support equals ``truth`` and whether it persisted."""
    truth = tuple(sorted(int(x) for x in truth))
    seq = [tuple(sorted(int(x) for x in D)) for D in supports]
    first = next((i for i, D in enumerate(seq) if D == truth), None)
    if first is None:
        return {"first_recovery": None, "deviations": 0, "recovered": False}
    dev = sum(1 for D in seq[first:] if D != truth)
    return {"first_recovery": first, "deviations": dev, "recovered": dev == 0}


@dataclass
class ArlLinDimResult:
    ledger: RunLedger
    supports: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    sup_errors: list = field(default_factory=list)
    complete_epochs: int = 0
    support_state: RidgeState | None = None


def run_arl_lin_dim(mdp: LinearKernelMdp, k0: int, delta: float, b: float | None,
                    total_episodes: int, rng: np.random.Generator, variant: str = "literal",
                    c_beta: float = 1.0, ledger: RunLedger | None = None) -> ArlLinDimResult:
    """Support-adaptive learner.

    ``supports[i]`` is the coordinate set used by the regret phase of epoch
    ``i``; ``estimates[i]`` is the full-dimensional estimate after that
    epoch's support phase, from which the next support is thresholded.
    """
    ledger = ledger if ledger is not None else RunLedger(mdp.base)
    d = mdp.dimension
    b = mdp.norm_bound if b is None else b
    theta_hat = np.ones(d)
    support_state = RidgeState(d)
    out = ArlLinDimResult(ledger, support_state=support_state)
    left = total_episodes
    i = 0
    while left > 0:
        sched = DimSchedule(i, k0, delta, variant)
        D = threshold_support(theta_hat, i, sched.threshold, ledger.anomalies)
        out.supports.append(D)
        n_reg = min(sched.regret_episodes, left)
        run_ucrl_vtr_lin(mdp, n_reg, sched.epoch_delta, b, rng, coords=D, ledger=ledger,
                         c_beta=c_beta, epoch=i, phase="regret")
        left -= n_reg
        n_sup = min(sched.support_episodes, left)
        if n_sup > 0:
            _, support_state = run_ucrl_vtr_lin(mdp, n_sup, delta, b, rng, warm_state=support_state,
                                                ledger=ledger, c_beta=c_beta, epoch=i, phase="support")
            left -= n_sup
        complete = n_reg == sched.regret_episodes and n_sup == sched.support_episodes
        theta_hat = support_state.estimate.copy()
        err = float(np.max(np.abs(theta_hat - mdp.theta_star)))
        out.estimates.append(theta_hat)
        out.sup_errors.append(err)
        if complete:
            out.complete_epochs += 1
        ledger.epochs.append({
            "epoch": i,
            "support": [int(x) for x in D],
            "threshold": sched.threshold,
            "regret_episodes": n_reg,
            "support_episodes": n_sup,
            "sup_error": err,
            "complete": complete,
        })
        i += 1
    out.support_state = support_state
    info = support_lock_in(out.supports, mdp.support)
    for row in ledger.epochs:
        row["lock_in"] = info["first_recovery"] is not None and row["epoch"] >= info["first_recovery"]
    return out


def max_norm_over_ellipsoid(ellipsoid: ConfidenceEllipsoid) -> float:
    """Upper bound ``||center|| + sqrt(radius / lambda_min(shape))`` on the largest member norm.

    Exact when the shape is a multiple of the identity.
    """
    lam = float(np.linalg.eigvalsh(ellipsoid.shape)[0])
    return float(np.linalg.norm(ellipsoid.center) + math.sqrt(max(ellipsoid.radius, 0.0) / lam))


def exact_max_norm_over_ellipsoid(ellipsoid: ConfidenceEllipsoid, tol: float = 1e-12) -> float:
    """Largest ``||theta||`` over the ellipsoid by a secular-equation solve.

    Used as a reference for the upper bound above.
    """
    c = np.asarray(ellipsoid.center, dtype=np.float64)
    r = ellipsoid.radius
    if r <= 0:
        return float(np.linalg.norm(c))
    lam, U = np.linalg.eigh(ellipsoid.shape)
    z = U.T @ c
    # maximise ||c + u||^2 with u^T Sigma u <= r; stationary points solve
    # (mu Sigma - I) u = c, i.e. u_j = z_j / (mu lam_j - 1) with mu > 1/lam_min
    def g(mu):
        u = z / (mu * lam - 1.0)
        return float(np.sum(lam * u * u)) - r

    lo = 1.0 / lam[0] * (1 + 1e-15)
    if abs(z[0]) < tol:
        u = z / (lo * lam - 1.0 + 1e-300)
        u[0] = 0.0
        rest = float(np.sum(lam * u * u))
        if rest <= r:
            u[0] = math.sqrt((r - rest) / lam[0])
            return float(np.linalg.norm(z + u))
    hi = lo * 2
    while g(hi) > 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    u = z / (hi * lam - 1.0)
    return float(np.linalg.norm(z + u))


@dataclass(frozen=True)
class NormSchedule:
    """Epoch ``i >= 1`` runs ``k1 * 2**(i-1)`` episodes at ``delta / 2**(i-1)``."""

    epoch: int
    k1: int
    delta: float

    @property
    def episodes(self) -> int:
        return self.k1 * 2 ** (self.epoch - 1)

    @property
    def epoch_delta(self) -> float:
        return self.delta / 2 ** (self.epoch - 1)


@dataclass
class ArlLinNormResult:
    ledger: RunLedger
    b_sequence: list = field(default_factory=list)
    covered: list = field(default_factory=list)
    lambda_min: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    complete_epochs: int = 0


def run_arl_lin_norm(mdp: LinearKernelMdp, k1: int, delta: float, b_init: float,
                     total_episodes: int, rng: np.random.Generator, c_beta: float = 1.0,
                     ledger: RunLedger | None = None) -> ArlLinNormResult:
    """Norm-adaptive learner with a fresh ridge state per epoch.

    ``b_sequence[0]`` is ``b_init``; entry ``i`` is the estimate formed at
    the end of epoch ``i``. ``covered[i-1]`` records whether the true
    parameter lay in the ellipsoid that produced entry ``i``.
    """
    if k1 < 1:
        raise ValueError("k1 must be >= 1")
    ledger = ledger if ledger is not None else RunLedger(mdp.base)
    d = mdp.dimension
    H = mdp.horizon
    out = ArlLinNormResult(ledger, b_sequence=[float(b_init)])
    left = total_episodes
    i = 1
    while left > 0:
        sched = NormSchedule(i, k1, delta)
        n = min(sched.episodes, left)
        b_i = out.b_sequence[-1]
        _, state = run_ucrl_vtr_lin(mdp, n, sched.epoch_delta, b_i, rng, ledger=ledger, c_beta=c_beta,
                                    epoch=i, phase="norm", b_estimate=b_i)
        left -= n
        ell = ellipsoid_of(state, b_i, d, H, sched.epoch_delta, c_beta)
        b_next = max_norm_over_ellipsoid(ell)
        out.b_sequence.append(b_next)
        out.covered.append(ell.contains(mdp.theta_star))
        out.lambda_min.append(min_eigenvalue(state))
        out.radii.append(ell.radius)
        if n == sched.episodes:
            out.complete_epochs += 1
        ledger.epochs.append({
            "epoch": i,
            "episodes": n,
            "b_estimate": b_i,
            "b_next": b_next,
            "covered": out.covered[-1],
            "lambda_min": out.lambda_min[-1],
            "radius": ell.radius,
        })
        i += 1
    return out


def norm_episodes(k1: int, n_epochs: int) -> int:
    return k1 * (2**n_epochs - 1)
