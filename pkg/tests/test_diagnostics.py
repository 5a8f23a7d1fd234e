from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arlab.cli import linear_d2_example
from arlab.diagnostics import (
    EluderSizeError,
    FunctionClassSample,
    ValueClassSampler,
    audit_dataset,
    audit_value_target_martingale,
    azuma_envelope,
    check_eigen_growth,
    eluder_dimension,
    estimate_rho_min,
    feature_moment,
    rho_from_values,
    tau_min,
)
from arlab.mdp import TransitionKernel
from arlab.scenarios import EIGEN_LINEAR, general_scenario, linear_scenario
from arlab.ucrl_vtr import VtrDataset, run_ucrl_vtr

from oracles import eluder_dimension_brute

tables = st.integers(0, 2**31 - 1).map(np.random.default_rng).map(
    lambda r: r.integers(0, 4, size=(int(r.integers(1, 5)), int(r.integers(1, 5)))) * 0.5
)


class TestEluder:
    @settings(max_examples=80)
    @given(tables, st.sampled_from([0.25, 0.5, 0.75, 1.0]), st.booleans())
    def test_matches_permutation_brute_force(self, table, eps, strict):
        got = eluder_dimension(FunctionClassSample(table, eps), strict=strict)
        assert got == eluder_dimension_brute(table, eps, strict)

    def test_linear_d2_example(self):
        cls = linear_d2_example()
        assert eluder_dimension(cls) == 2
        assert eluder_dimension(cls, strict=False) == 2
        assert eluder_dimension_brute(cls.table, 0.5) == 2

    def test_boundary_convention(self):
        # a single gap equal to the scale counts only in the non-strict convention
        cls = FunctionClassSample([[0.0], [0.5]], 0.5)
        assert eluder_dimension(cls, strict=True) == 0
        assert eluder_dimension(cls, strict=False) == 1

    def test_frozen_example(self):
        # three inputs, oracle value 2 in both conventions
        table = np.array([[0, 0, 0], [1, 1, 0], [0, 1, 1]], dtype=float)
        assert eluder_dimension_brute(table, 0.5) == 2
        assert eluder_dimension(FunctionClassSample(table, 0.5)) == 2

    @given(tables, st.sampled_from([0.25, 0.5, 1.0]))
    def test_monotone_in_class_and_scale(self, table, eps):
        full = eluder_dimension(FunctionClassSample(table, eps))
        if table.shape[0] > 1:
            assert eluder_dimension(FunctionClassSample(table[:-1], eps)) <= full
        assert eluder_dimension(FunctionClassSample(table, 2 * eps)) <= full

    def test_trivial_and_oversized(self):
        assert eluder_dimension(FunctionClassSample([[1.0, 2.0]], 0.1)) == 0
        with pytest.raises(EluderSizeError):
            eluder_dimension(FunctionClassSample(np.zeros((2, 13)), 0.1))
        with pytest.raises(ValueError):
            FunctionClassSample([[1.0]], 0.0)


class TestMartingale:
    def test_envelope_frozen(self):
        assert float(azuma_envelope(100, 3, 0.1)) == pytest.approx(220.297214761273489, rel=1e-13)

    def test_deterministic_transitions_have_no_noise(self):
        P = np.zeros((2, 1, 2))
        P[:, 0, 1] = 1.0
        V = np.array([[0.0, 2.0]] * 5)
        audit = audit_value_target_martingale([0] * 5, [0] * 5, V, [2.0] * 5, TransitionKernel(P), 2, 0.1)
        assert np.all(audit.increments == 0) and audit.violations == 0
        assert audit.sigma2_hat == 0.0 == audit.sigma2_exact

    def test_hand_increment(self):
        P = np.array([[[0.5, 0.5]], [[0.5, 0.5]]])
        # mean 1, variance 1; observing 2 gives squared residual 1 and increment 0
        a = audit_value_target_martingale([0], [0], [[0.0, 2.0]], [2.0], P, 2, 0.1)
        assert a.increments.tolist() == [0.0]

    def test_real_run_within_envelope(self):
        mdp, fams = general_scenario(seed=0)
        data = VtrDataset(mdp.n_states, mdp.horizon)
        run_ucrl_vtr(mdp, fams.family(2), 128, 0.1, np.random.default_rng(0), dataset=data)
        audit = audit_dataset(data, fams.true_kernel, 0.1)
        assert audit.running.size == 128 * mdp.horizon
        assert audit.violations == 0
        assert audit.sigma2_hat == pytest.approx(audit.sigma2_exact, rel=0.5)

    def test_empty(self):
        a = audit_value_target_martingale([], [], np.zeros((0, 2)), [], np.ones((2, 1, 2)) / 2, 2, 0.1)
        assert a.violation_rate == 0.0 and not a.violated


@pytest.fixture(scope="module")
def lm():
    return linear_scenario(seed=0, **EIGEN_LINEAR)


class TestEigen:
    def test_feature_moment_hand_value(self, lm):
        V = np.full(lm.base.n_states, 2.0)
        f = np.einsum("sapd,p->sad", lm.features, V).reshape(-1, lm.dimension)
        assert np.allclose(feature_moment(lm, V), f.T @ f / f.shape[0])

    def test_rho_prefix_monotone(self, lm):
        small = estimate_rho_min(lm, 10, np.random.default_rng(3), details=True)
        big = estimate_rho_min(lm, 30, np.random.default_rng(3), details=True)
        assert np.array_equal(small.per_sample, big.per_sample[:10])
        assert big.value <= small.value
        assert small.value == small.per_sample.min() >= 0

    def test_sampler_range(self, lm):
        rng = np.random.default_rng(0)
        for _ in range(20):
            V = ValueClassSampler()(lm, rng)
            assert V.shape == (lm.base.n_states,) and np.all(V <= lm.horizon)

    def test_rho_from_values_skips_zero_rows(self, lm):
        S = lm.base.n_states
        V = np.vstack([np.zeros(S), np.full(S, 1.0), np.full(S, 1.0)])
        est = rho_from_values(lm, V, details=True)
        assert est.per_sample.size == 1
        with pytest.raises(ValueError):
            rho_from_values(lm, np.zeros((2, S)))

    def test_tau_min_frozen(self):
        assert tau_min(0.01, 2, 1000, 5, 0.1) == pytest.approx(1956226.57599030251, rel=1e-13)
        assert tau_min(0.0, 2, 10, 2, 0.1) == math.inf

    def test_growth_check_by_hand(self):
        # tau_min = (0.16 + 8/30) * log(16) ~ 1.18; the bound is 1 + 5k
        rho = 10.0
        rep = check_eigen_growth([(1, 100.0), (2, 5.0), (3, 15.9), (4, 21.0)], rho, 1, 0.5, 1)
        assert rep.tau_min == pytest.approx((0.16 + 8 / 30) * math.log(16))
        assert rep.checked == 3 and rep.flagged == [2, 3]
        assert rep.violation_fraction == pytest.approx(2 / 3)
        empty = check_eigen_growth([(1, 1.0)], 0.0, 2, 0.1, 2)
        assert empty.checked == 0 and empty.violation_fraction == 0.0
        with pytest.raises(ValueError):
            check_eigen_growth([], 1.0, 2, 0.1, 2)


class TestWorkedExamples:
    def test_constant_difference_class(self):
        table = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        for strict, expected in ((True, 1), (False, 2)):
            got = eluder_dimension(FunctionClassSample(table, 0.5), strict=strict)
            assert got == eluder_dimension_brute(table, 0.5, strict) == expected

    def test_martingale_envelope_rarely_crossed(self):
        hits = 0
        for seed in range(200):
            mdp, fams = general_scenario(rng=np.random.default_rng([50, seed]))
            data = VtrDataset(mdp.n_states, mdp.horizon)
            run_ucrl_vtr(mdp, fams.family(2), 32, 0.1, np.random.default_rng([51, seed]), dataset=data)
            hits += audit_dataset(data, fams.true_kernel, 0.1).violated
        assert hits / 200 <= 0.15

    def test_residual_variance_matches_exact(self):
        rng = np.random.default_rng(3)
        P = rng.dirichlet(np.ones(5), size=(5, 2))
        n = 10**5
        s = rng.integers(5, size=n)
        a = rng.integers(2, size=n)
        V = rng.uniform(0, 4, size=(n, 5))
        cum = np.cumsum(P[s, a], axis=1)
        nxt = np.minimum((rng.random(n)[:, None] >= cum).sum(axis=1), 4)
        y = V[np.arange(n), nxt]
        audit = audit_value_target_martingale(s, a, V, y, TransitionKernel(P), 4, 0.1)
        assert abs(audit.sigma2_hat - audit.sigma2_exact) <= 0.02 * audit.sigma2_exact

    def test_tabular_constant_value_is_degenerate_but_nonnegative(self):
        m = linear_scenario(0, n_states=2, n_actions=1, d=4, d_star=3, profile="tabular")
        rho = rho_from_values(m, np.full(2, float(m.horizon)))
        assert rho >= 0.0

    def test_orthogonal_mixture_has_positive_moment(self):
        m = linear_scenario(0, d=2, d_star=2)
        assert estimate_rho_min(m, 100, np.random.default_rng(0)) > 0.0

    def test_zero_rho_checks_nothing(self):
        rep = check_eigen_growth([(k, 0.0) for k in range(1, 50)], 0.0, 3, 0.1, 2)
        assert rep.tau_min == math.inf and rep.checked == 0 and rep.violations == 0

    def test_tau_min_unit_log(self):
        assert tau_min(1.0, 1, 1, 1, 2 / math.e) == pytest.approx(16 + 8 / 3)
