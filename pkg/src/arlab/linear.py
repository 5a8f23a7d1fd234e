"""Linear kernel MDPs and the ridge-regression optimistic learner.

Transitions are linear in a known feature map, ``P(s'|s,a) = <phi(s,a,s'), theta>``.
The learner regresses realized next-state values onto integrated features
``phi_V(s,a) = sum_s' phi(s,a,s') V(s')`` and plans with an
ellipsoidal exploration bonus.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import kernels
from .mdp import EpisodicMdp, Policy, RunLedger, TransitionKernel, ValueTable, sample_episode

PROFILES = ("mixture", "tabular", "diverse")


class InfeasibleProfileError(ValueError):
    """Requested sparsity cannot be realised by the chosen profile."""


@dataclass(frozen=True, eq=False)
class LinearKernelMdp:
    """Episodic MDP whose kernel is linear in ``features``.

    Attributes
    ----------
    base : EpisodicMdp
        The MDP with the induced kernel.
    features : ndarray, shape (S, A, S, d)
    theta_star : ndarray, shape (d,)
    norm_bound : float
        Upper bound ``b`` on the parameter norm handed to learners.
    profile : str
    """

    base: EpisodicMdp
    features: NDArray[np.float64]
    theta_star: NDArray[np.float64]
    norm_bound: float
    profile: str = "mixture"
    mixture_weights: NDArray[np.float64] | None = None
    feature_scale: float = 1.0

    @property
    def dimension(self) -> int:
        return self.features.shape[-1]

    @property
    def support(self) -> NDArray[np.int64]:
        return np.flatnonzero(self.theta_star != 0)

    @property
    def sparsity(self) -> int:
        return int(self.support.size)

    @property
    def gamma_min_coord(self) -> float:
        nz = np.abs(self.theta_star[self.theta_star != 0])
        return float(nz.min()) if nz.size else 0.0

    @property
    def theta_norm(self) -> float:
        return float(np.linalg.norm(self.theta_star))

    @property
    def horizon(self) -> int:
        return self.base.horizon

    def integrate(self, values: ArrayLike) -> NDArray[np.float64]:
        return integrate_features(self, values)

    def to_dict(self) -> dict:
        return {
            "reward": self.base.reward.tolist(),
            "horizon": self.base.horizon,
            "initial_state": self.base.initial_state,
            "features": self.features.tolist(),
            "theta_star": self.theta_star.tolist(),
            "norm_bound": self.norm_bound,
            "profile": self.profile,
            "feature_scale": self.feature_scale,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearKernelMdp":
        phi = np.array(doc["features"], dtype=np.float64)
        theta = np.array(doc["theta_star"], dtype=np.float64)
        return from_features(phi, theta, np.array(doc["reward"]), int(doc["horizon"]),
                             norm_bound=float(doc["norm_bound"]), profile=doc.get("profile", "mixture"),
                             initial_state=int(doc.get("initial_state", 0)),
                             feature_scale=float(doc.get("feature_scale", 1.0)))


def induced_kernel(features: NDArray, theta: NDArray) -> NDArray[np.float64]:
    return np.einsum("sapd,d->sap", features, theta)


def from_features(features, theta, reward, horizon, norm_bound=None, profile="mixture",
                  initial_state=0, mixture_weights=None, feature_scale=1.0) -> LinearKernelMdp:
    """Wrap a feature table and parameter, validating the induced kernel."""
    phi = np.ascontiguousarray(features, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    P = induced_kernel(phi, theta)
    if P.min() < -1e-12:
        raise ValueError("features and parameter induce negative probabilities")
    dev = np.abs(P.sum(axis=2) - 1.0).max()
    if dev > 1e-9:
        raise ValueError(f"induced rows deviate from 1 by {dev:.2e}")
    kern = TransitionKernel(np.clip(P, 0.0, None), normalize=False)
    base = EpisodicMdp(reward, kern, horizon, initial_state)
    b = float(np.linalg.norm(theta)) if norm_bound is None else float(norm_bound)
    if b < np.linalg.norm(theta) - 1e-12:
        raise ValueError("norm bound below the parameter norm")
    phi.setflags(write=False)
    theta = theta.copy()
    theta.setflags(write=False)
    return LinearKernelMdp(base, phi, theta, b, profile, mixture_weights, feature_scale)


def max_feature_norm(features: NDArray, horizon: int) -> float:
    """Exact ``max ||phi_V(s,a)||`` over ``V`` in ``[0, H]^S``.

    The norm of a linear map is convex in ``V``, so the maximum over the box
    sits at a vertex; all ``2^S`` vertices are enumerated.
    """
    S = features.shape[0]
    if S > 16:
        raise ValueError("vertex enumeration limited to 16 states")
    verts = np.array(list(itertools.product((0.0, float(horizon)), repeat=S)))
    phis = np.einsum("sapd,vp->vsad", features, verts)
    return float(np.sqrt((phis**2).sum(axis=-1)).max())


def triangle_feature_bound(features: NDArray, horizon: int) -> float:
    """Looser bound ``H * max_{s,a} sum_s' ||phi(s,a,s')||``."""
    return float(horizon * np.linalg.norm(features, axis=-1).sum(axis=2).max())


def _sparse_weights(d: int, d_star: int, rng, weights=None) -> NDArray[np.float64]:
    w = np.zeros(d)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.size != d_star:
            raise InfeasibleProfileError("need one weight per active coordinate")
        if np.any(weights <= 0) or abs(weights.sum() - 1) > 1e-9:
            raise InfeasibleProfileError("mixture weights must be positive and sum to 1")
        w[:d_star] = weights
    else:
        w[:d_star] = rng.dirichlet(np.full(d_star, 2.0))
    return w


def _orthogonal_kernels(S: int, A: int, d: int, rng, spread: float) -> NDArray[np.float64]:
    """``d`` near-deterministic kernels that send each (s, a) to distinct states."""
    if d > S:
        raise InfeasibleProfileError(f"orthogonal base kernels need d <= |S| (d={d}, S={S})")
    K = np.full((d, S, A, S), spread / S)
    for s in range(S):
        for a in range(A):
            targets = rng.permutation(S)[:d]
            for j in range(d):
                K[j, s, a, targets[j]] += 1.0 - spread
    return K


def build_linear_mdp(n_states: int, n_actions: int, horizon: int, d: int, d_star: int,
                     theta_profile: str, rng: np.random.Generator, weights=None, reward=None,
                     spread: float = 0.1, scale: str = "vertex", norm_slack: float = 0.0,
                     heterogeneity: float = 0.75, signed_inactive: bool = False,
                     mix_concentration: float = 1.0) -> LinearKernelMdp:
    """Generate a linear kernel MDP.

    Profiles
    --------
    mixture
        Coordinates are fixed near-deterministic base kernels and the true
        kernel is a sparse convex combination of them with ``weights``.
    tabular
        One coordinate per (s, a, s') triple, so ``d = S * A * S`` and the
        parameter is the kernel itself; ``d_star`` counts nonzero entries.
    diverse
        Like mixture, but each state mixes the active base kernels with its
        own random weights (Dirichlet with ``mix_concentration``; small
        values push states towards single base kernels) and every
        coordinate carries a per-(s, a)
        multiplier, so even constant value functions produce features
        pointing in varied directions. With ``signed_inactive`` the
        multipliers of inactive coordinates also get random signs; the kernel
        is unaffected since those coordinates carry zero weight.

    Features are divided by their exact maximal integrated norm so that
    ``||phi_V|| <= 1`` on ``[0, H]^S``; the parameter is scaled up to keep
    the kernel fixed. ``scale='triangle'`` uses the looser per-row bound.
    """
    if not d >= d_star >= 1:
        raise InfeasibleProfileError("need d >= d_star >= 1")
    if theta_profile not in PROFILES:
        raise ValueError(f"unknown profile {theta_profile!r}")
    S, A, H = n_states, n_actions, horizon
    r = rng.random((S, A)) if reward is None else np.asarray(reward, dtype=np.float64)
    w = None
    if theta_profile == "mixture":
        w = _sparse_weights(d, d_star, rng, weights)
        K = _orthogonal_kernels(S, A, d, rng, spread)
        phi = np.moveaxis(K, 0, -1)
        theta = w.copy()
    elif theta_profile == "tabular":
        if d != S * A * S:
            raise InfeasibleProfileError("tabular profile needs d = S*A*S")
        if d_star < S * A:
            raise InfeasibleProfileError("every row needs at least one successor")
        P = np.zeros((S, A, S))
        # each row gets at least one successor, remaining nonzeros spread at random
        per_row = np.full(S * A, 1)
        extra = rng.choice(S * A, size=d_star - S * A, replace=True) if d_star > S * A else []
        for i in extra:
            per_row[i] += 1
        if per_row.max() > S:
            raise InfeasibleProfileError("too many nonzeros for some row")
        for i, (s, a) in enumerate(itertools.product(range(S), range(A))):
            cols = rng.choice(S, size=per_row[i], replace=False)
            P[s, a, cols] = rng.dirichlet(np.full(per_row[i], 2.0))
        phi = np.zeros((S, A, S, d))
        idx = np.arange(d).reshape(S, A, S)
        for s, a, sp in itertools.product(range(S), range(A), range(S)):
            phi[s, a, sp, idx[s, a, sp]] = 1.0
        theta = P.reshape(-1)
        if np.count_nonzero(theta) != d_star:
            raise InfeasibleProfileError("sampled kernel lost a nonzero")
    else:
        w = _sparse_weights(d, d_star, rng, weights)
        K = _orthogonal_kernels(S, A, d, rng, spread)
        g = rng.uniform(1.0 - heterogeneity, 1.0 + heterogeneity, size=(S, A, d))
        if signed_inactive:
            g[:, :, d_star:] *= rng.choice((-1.0, 1.0), size=(S, A, d - d_star))
        if d_star > 1:
            lam = rng.dirichlet(np.full(d_star, mix_concentration), size=S)
            g[:, :, :d_star] = (lam / w[None, :d_star])[:, None, :]
        else:
            g[:, :, 0] = 1.0 / w[0]
        phi = np.einsum("jsap,saj->sapj", K, g)
        theta = w.copy()
    norm = max_feature_norm(phi, H) if scale == "vertex" else triangle_feature_bound(phi, H)
    phi = phi / norm
    theta = theta * norm
    b = float(np.linalg.norm(theta)) * (1.0 + norm_slack)
    return from_features(phi, theta, r, H, norm_bound=b, profile=theta_profile,
                         mixture_weights=w, feature_scale=1.0 / norm)


def integrate_features(mdp: LinearKernelMdp, values: ArrayLike) -> NDArray[np.float64]:
    """``phi_V(s, a)`` for a value vector over states, shape (S, A, d)."""
    return np.einsum("sapd,p->sad", mdp.features, np.asarray(values, dtype=np.float64))


class RidgeState:
    """Regularised least-squares state for value-targeted regression.

    ``gram = I + sum phi phi^T`` and ``moment = sum phi y``; the estimate is
    solved lazily and cached.
    """

    def __init__(self, dim: int, gram=None, moment=None, n_samples: int = 0, n_episodes: int = 0):
        self.dim = dim
        self.gram = np.eye(dim) if gram is None else np.array(gram, dtype=np.float64)
        self.moment = np.zeros(dim) if moment is None else np.array(moment, dtype=np.float64)
        self.n_samples = n_samples
        self.n_episodes = n_episodes
        self._theta = None

    def copy(self) -> "RidgeState":
        return RidgeState(self.dim, self.gram.copy(), self.moment.copy(), self.n_samples, self.n_episodes)

    def add(self, phi: NDArray, y: float) -> None:
        phi = np.asarray(phi, dtype=np.float64)
        self.gram += np.outer(phi, phi)
        self.moment += phi * y
        self.n_samples += 1
        self._theta = None

    @property
    def estimate(self) -> NDArray[np.float64]:
        if self._theta is None:
            self._theta = np.linalg.solve(self.gram, self.moment)
        return self._theta

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "gram": self.gram.tolist(),
            "moment": self.moment.tolist(),
            "n_samples": self.n_samples,
            "n_episodes": self.n_episodes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RidgeState":
        return cls(doc["dim"], doc["gram"], doc["moment"], doc["n_samples"], doc["n_episodes"])


def ridge_update(state: RidgeState, phi_v: ArrayLike, target: float) -> RidgeState:
    """Return a new state with one more record."""
    out = state.copy()
    out.add(phi_v, target)
    return out


def batch_ridge(phis: NDArray, targets: NDArray, dim: int | None = None) -> NDArray[np.float64]:
    """Fresh solve of ``min sum (y - <phi, theta>)^2 + ||theta||^2``."""
    phis = np.atleast_2d(np.asarray(phis, dtype=np.float64))
    dim = phis.shape[1] if dim is None else dim
    if phis.size == 0:
        return np.zeros(dim)
    G = np.eye(dim) + phis.T @ phis
    return np.linalg.solve(G, phis.T @ np.asarray(targets, dtype=np.float64))


def min_eigenvalue(state: RidgeState) -> float:
    return float(np.linalg.eigvalsh(state.gram)[0])


def beta_lin(b: float, d: int, horizon: int, k: int, delta: float, c_beta: float = 1.0) -> float:
    """Ellipsoid radius ``c (b^2 + H^2 d log(kH) log^2(k^2 H / delta))``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    H = horizon
    return c_beta * (b * b + H * H * d * math.log(k * H) * math.log(k * k * H / delta) ** 2)


@dataclass
class ConfidenceEllipsoid:
    center: NDArray[np.float64]
    shape: NDArray[np.float64]
    radius: float
    c_beta: float = 1.0

    def distance(self, theta: ArrayLike) -> float:
        diff = np.asarray(theta, dtype=np.float64) - self.center
        return float(diff @ self.shape @ diff)

    def contains(self, theta: ArrayLike) -> bool:
        return self.distance(theta) <= self.radius

    @classmethod
    def from_state(cls, state: RidgeState, radius: float, c_beta: float = 1.0) -> "ConfidenceEllipsoid":
        return cls(state.estimate.copy(), state.gram.copy(), radius, c_beta)


def optimistic_q_plan(ellipsoid: ConfidenceEllipsoid, reward, features: NDArray,
                      horizon: int) -> tuple[ValueTable, Policy, NDArray[np.float64]]:
    """Backward recursion with an ellipsoidal bonus.

    Values are clipped to ``[0, H]``. Also returns the integrated features
    ``phi_{V_{h+1}}(s, a)`` for every step, shape (H, S, A, d).
    """
    sigma_inv = np.linalg.inv(ellipsoid.shape)
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    Q, V, pi, phis = kernels.linear_backward(
        np.ascontiguousarray(features), np.asarray(reward, dtype=np.float64), int(horizon),
        np.ascontiguousarray(ellipsoid.center), np.ascontiguousarray(sigma_inv),
        math.sqrt(max(ellipsoid.radius, 0.0)),
    )
    return ValueTable(V, Q), Policy(pi), phis


@dataclass
class LinearRunInfo:
    """Per-episode diagnostics of a linear run."""

    covered: list = field(default_factory=list)
    lambda_min: list = field(default_factory=list)
    estimates: list = field(default_factory=list)


def _coords(coords, d: int) -> NDArray[np.int64]:
    if coords is None:
        return np.arange(d)
    c = np.unique(np.asarray(coords, dtype=np.int64))
    if c.size == 0:
        raise ValueError("coordinate subset must be nonempty")
    if c.min() < 0 or c.max() >= d:
        raise ValueError("coordinate out of range")
    return c


def run_ucrl_vtr_lin(mdp: LinearKernelMdp, episodes: int, delta: float, b: float | None,
                     rng: np.random.Generator, coords=None, warm_state: RidgeState | None = None,
                     ledger: RunLedger | None = None, c_beta: float = 1.0, epoch: int = 0,
                     phase: str = "ucrl-lin", record_estimates: bool = False,
                     b_estimate: float | None = None, info: LinearRunInfo | None = None
                     ) -> tuple[RunLedger, RidgeState]:
    """Optimistic ridge learner, optionally restricted to a coordinate subset.

    Features are projected onto ``coords`` and the ridge state lives in that
    subspace. ``warm_state`` resumes a previous run; its episode counter
    drives the radius schedule, so stopping and resuming reproduces one
    continuous run.
    """
    ledger = ledger if ledger is not None else RunLedger(mdp.base)
    c = _coords(coords, mdp.dimension)
    b = mdp.norm_bound if b is None else b
    state = warm_state if warm_state is not None else RidgeState(c.size)
    if state.dim != c.size:
        raise ValueError("warm state dimension does not match the coordinate subset")
    phi = np.ascontiguousarray(mdp.features[..., c])
    base = mdp.base
    H = base.horizon
    theta_sub = mdp.theta_star[c]
    full_support = np.all(np.isin(mdp.support, c))
    for _ in range(episodes):
        k = max(state.n_episodes, 1)
        radius = beta_lin(b, c.size, H, k, delta, c_beta)
        ell = ConfidenceEllipsoid.from_state(state, radius, c_beta)
        vt, policy, phis = optimistic_q_plan(ell, base.reward, phi, H)
        traj = sample_episode(base, policy, rng, len(ledger) + 1)
        for h in range(H):
            s, a = traj.states[h], traj.actions[h]
            y = float(vt.values[h + 1, traj.states[h + 1]])
            state.add(phis[h, s, a], y)
        state.n_episodes += 1
        lam = min_eigenvalue(state)
        covered = None
        if full_support:
            k_next = max(state.n_episodes, 1)
            r_next = beta_lin(b, c.size, H, k_next, delta, c_beta)
            covered = ConfidenceEllipsoid(state.estimate, state.gram, r_next).contains(theta_sub)
        ledger.record(policy, traj, epoch=epoch, phase=phase, values=vt.values,
                      active_coords=tuple(int(x) for x in c), b_estimate=b_estimate,
                      beta=radius, lambda_min=lam, covered=covered)
        if info is not None:
            info.covered.append(covered)
            info.lambda_min.append(lam)
            if record_estimates:
                full = np.zeros(mdp.dimension)
                full[c] = state.estimate
                info.estimates.append(full)
    return ledger, state


def ellipsoid_of(state: RidgeState, b: float, d: int, horizon: int, delta: float,
                 c_beta: float) -> ConfidenceEllipsoid:
    """Ellipsoid the learner would plan with next."""
    k = max(state.n_episodes, 1)
    return ConfidenceEllipsoid.from_state(state, beta_lin(b, d, horizon, k, delta, c_beta), c_beta)
