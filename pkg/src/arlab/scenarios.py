"""Default instances used by the harness and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .families import NestedModelFamilies, build_nested_families
from .linear import LinearKernelMdp, build_linear_mdp
from .mdp import EpisodicMdp, TransitionKernel


def tiered_mdp(rng: np.random.Generator, n_states: int = 5, n_actions: int = 2, horizon: int = 3,
               n_good: int = 2, noise: float = 0.2, climb=(0.45, 0.75, 0.35, 0.7)) -> EpisodicMdp:
    """Two-tier MDP: rewarding states and barren states.

    In good states the better-paying action risks a fall; in barren states
    nothing pays and the second action climbs more reliably. Rows are
    perturbed with Dirichlet noise of weight ``noise``. ``climb`` holds the
    probabilities of landing in the good tier for (good, first action),
    (good, other actions), (barren, first action), (barren, other actions).
    """
    S, A = n_states, n_actions
    good = np.arange(S) < n_good
    r = np.zeros((S, A))
    r[good, 0] = 1.0
    r[good, 1:] = 0.7
    # probability of landing in the good tier
    up = np.empty((S, A))
    up[good, 0], up[good, 1:], up[~good, 0], up[~good, 1:] = climb
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            base = np.where(good, up[s, a] / good.sum(), (1 - up[s, a]) / (~good).sum())
            P[s, a] = (1 - noise) * base + noise * rng.dirichlet(np.ones(S))
    return EpisodicMdp(r, TransitionKernel(P), horizon, initial_state=S - 1)


GENERAL_CLIMB = (0.8, 0.97, 0.7, 0.95)


def general_scenario(seed: int = 0, M: int = 3, m_star: int = 2, sizes=(4, 8, 12),
                     target_delta: float = 0.05, tv_radius: float = 0.2, horizon: int = 3,
                     tilt: float = 30.0, concentration: float = 0.3,
                     rng: np.random.Generator | None = None) -> tuple[EpisodicMdp, NestedModelFamilies]:
    """Tiered MDP with nested families whose wrong kernels drift to the barren tier.

    A reliable climb under the true kernel against wrong kernels that mostly
    fall keeps the realized prediction gaps well above the certified minimum.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    mdp = tiered_mdp(rng, horizon=horizon, climb=GENERAL_CLIMB)
    fam = build_nested_families(mdp, M, m_star, target_delta, sizes, rng, tv_radius=tv_radius,
                                proposal="pessimistic", tilt=tilt, concentration=concentration)
    return mdp, fam


def linear_scenario(seed: int = 0, n_states: int = 6, n_actions: int = 2, horizon: int = 3, d: int = 4,
                    d_star: int = 4, profile: str = "mixture", weights=None,
                    rng: np.random.Generator | None = None, **kw) -> LinearKernelMdp:
    rng = np.random.default_rng(seed) if rng is None else rng
    return build_linear_mdp(n_states, n_actions, horizon, d, d_star, profile, rng, weights=weights, **kw)


# Sparse instance used for support and norm adaptation. Saturated optimistic
# values make plain mixture features collinear, so the inactive coordinates
# get signed per-(s, a) multipliers and the longer horizon gives each episode
# several saturated steps from different states.
SPARSE_LINEAR = {
    "n_states": 10,
    "n_actions": 2,
    "horizon": 7,
    "d": 6,
    "d_star": 2,
    "profile": "diverse",
    "weights": (0.6, 0.4),
    "spread": 0.9,
    "heterogeneity": 0.5,
    "signed_inactive": True,
}

# Small mixture instance for ellipsoid coverage.
COVERAGE_LINEAR = {"n_states": 6, "n_actions": 2, "horizon": 3, "d": 4, "d_star": 4, "profile": "mixture"}

# Two-coordinate instance whose states lean on a single base kernel each.
EIGEN_LINEAR = {
    "n_states": 6,
    "n_actions": 2,
    "horizon": 5,
    "d": 2,
    "d_star": 2,
    "profile": "diverse",
    "weights": (0.5, 0.5),
    "spread": 0.9,
    "heterogeneity": 0.5,
    "mix_concentration": 0.1,
}

# Ridge radius constant calibrated on held-out seeds of the coverage instance.
C_BETA = 0.05


def sparse_linear_scenario(seed: int = 0, rng: np.random.Generator | None = None, **overrides) -> LinearKernelMdp:
    return linear_scenario(seed, rng=rng, **{**SPARSE_LINEAR, **overrides})
