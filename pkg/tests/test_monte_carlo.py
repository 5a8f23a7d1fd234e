"""Seeded Monte Carlo checks of the adaptive linear learners."""

from __future__ import annotations

import numpy as np
import pytest

from arlab.arl_lin import DimSchedule, norm_episodes, run_arl_lin_dim, run_arl_lin_norm, support_lock_in
from arlab.scenarios import C_BETA, sparse_linear_scenario

SEEDS = range(30)
K0 = 16
FULL_EPOCHS = 3


def _dim_runs():
    budget = sum(DimSchedule(i, K0, 0.1, "remark").regret_episodes + DimSchedule(i, K0, 0.1, "remark").support_episodes
                 for i in range(FULL_EPOCHS))
    out = []
    for seed in SEEDS:
        m = sparse_linear_scenario(rng=np.random.default_rng([60, seed]))
        res = run_arl_lin_dim(m, K0, 0.1, None, budget, np.random.default_rng([61, seed]), variant="remark",
                              c_beta=C_BETA)
        assert res.complete_epochs == FULL_EPOCHS
        out.append((m, res))
    return out


@pytest.fixture(scope="module")
def dim_runs():
    return _dim_runs()


def test_estimate_error_nonincreasing(dim_runs):
    med = np.median([res.sup_errors for _, res in dim_runs], axis=0)
    assert np.all(np.diff(med) <= 0)


@pytest.mark.xfail(strict=True, reason="after three epochs at k0=16 the sup-error (about 1-3) still exceeds "
                                       "the 0.9**i threshold, so inactive coordinates are admitted")
def test_support_recovered_within_three_epochs(dim_runs):
    kept = [support_lock_in(res.supports, m.support)["recovered"] for m, res in dim_runs]
    assert np.mean(kept) >= 0.9


def test_norm_estimates_stay_below_initial_bound():
    for seed in SEEDS:
        m = sparse_linear_scenario(rng=np.random.default_rng([62, seed]))
        b0 = 10 * m.theta_norm
        res = run_arl_lin_norm(m, 64, 0.1, b0, norm_episodes(64, 6), np.random.default_rng([63, seed]),
                               c_beta=C_BETA)
        assert max(res.b_sequence) <= b0 + 1
