from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arlab.arl_gen import (
    EpochSchedule,
    lock_in_epoch,
    lock_in_summary,
    run_arl_gen,
    run_ucrl_vtr_epochs,
    schedule,
    select_class,
    statistics_from_losses,
    test_statistic as statistic,
    threshold,
)
from arlab.families import NestedModelFamilies
from arlab.scenarios import general_scenario
from arlab.ucrl_vtr import family_losses


def test_schedule_doubles_and_truncates():
    s = schedule(10, 0.1)
    assert [(e.epoch, n) for e, n in s] == [(1, 2), (2, 4), (3, 4)]
    assert [e.epoch_delta for e, _ in s] == [0.05, 0.025, 0.0125]
    assert sum(n for _, n in schedule(4094, 0.1)) == 4094
    assert len(schedule(4094, 0.1)) == 11


@given(st.integers(1, 20))
def test_prior_episodes_count_earlier_epochs(i):
    assert EpochSchedule(i, 0.1).prior_episodes == sum(2**j for j in range(1, i))


def test_threshold_values():
    assert threshold(0.1, 4) == pytest.approx(0.6)
    assert threshold(0.0, 1) == pytest.approx(math.sqrt(0.5))
    with pytest.raises(ValueError):
        threshold(0.0, 0)


def test_select_class_smallest_under_threshold():
    assert select_class([0.5, 0.2, 0.1], 0.3) == (2, False)
    assert select_class([0.1, 0.1, 0.1], 0.1) == (1, False)
    assert select_class([0.5, 0.4, 0.35], 0.3) == (3, True)
    with pytest.raises(ValueError):
        select_class([], 1.0)


def test_lock_in_rules():
    sel = [3, 2, 2, 2, 1, 2]
    assert lock_in_epoch(sel, 2) == 2
    assert lock_in_summary(sel, 2) == {"lock_in_epoch": 2, "deviations": 1, "locked": False}
    assert lock_in_summary([3, 2, 2, 2, 2], 2)["locked"]
    assert lock_in_epoch([3, 2, 2], 2) is None


@given(st.integers(0, 2**31 - 1))
def test_nested_statistics_nonincreasing(seed):
    rng = np.random.default_rng(seed)
    losses = rng.random(12)
    sizes = sorted(rng.integers(1, 13, size=4).tolist())
    T = statistics_from_losses(losses, sizes, 7)
    assert np.all(np.diff(T) <= 0)
    assert T[-1] == losses[: sizes[-1]].min() / 7


@pytest.fixture(scope="module")
def general_run():
    mdp, fams = general_scenario(seed=2)
    res = run_arl_gen(mdp, fams, 254, 0.1, np.random.default_rng(4))
    return mdp, fams, res


class TestRun:
    def test_epoch_layout(self, general_run):
        _, fams, res = general_run
        assert len(res.ledger) == 254
        assert [r.epoch for r in res.selections] == list(range(1, 8))
        first = res.selections[0]
        assert first.selected == fams.n_families and np.all(np.isnan(first.statistics))
        eps = [e.epoch for e in res.ledger.episodes]
        assert [eps.count(i) for i in range(1, 8)] == [2**i for i in range(1, 8)]

    def test_statistics_recomputed_from_data(self, general_run):
        mdp, fams, res = general_run
        H = mdp.horizon
        for rec in res.selections[1:]:
            prior = EpochSchedule(rec.epoch, 0.1).prior_episodes
            head = res.dataset.head(prior * H)
            ref = [statistic(head, fams.family(m)) for m in range(1, fams.n_families + 1)]
            assert np.allclose(rec.statistics, ref, rtol=1e-12)
            assert np.all(np.diff(rec.statistics) <= 0)
            gamma = ref[-1] + math.sqrt(rec.epoch) * 2 ** (-rec.epoch / 2)
            ok = [m for m, t in enumerate(ref, 1) if t <= gamma]
            assert rec.selected == (ok[0] if ok else fams.n_families)

    def test_episodes_use_selected_class(self, general_run):
        _, _, res = general_run
        sel = dict((r.epoch, r.selected) for r in res.selections)
        assert all(e.selected_class == sel[e.epoch] for e in res.ledger.episodes)

    def test_statistic_definition(self, general_run):
        mdp, fams, res = general_run
        data = res.dataset
        T = statistic(data, fams.family(2))
        assert T == pytest.approx(family_losses(data, fams.family(2)).min() / len(data))


def test_statistic_needs_data():
    from arlab.ucrl_vtr import VtrDataset

    with pytest.raises(ValueError):
        statistic(VtrDataset(2, 2), np.ones((1, 2, 1, 2)) / 2)


def test_single_family_reduces_to_base_learner():
    mdp, fams = general_scenario(seed=5)
    one = NestedModelFamilies(fams.family(3), (fams.sizes[-1],), 1, fams.true_index)
    a = run_arl_gen(mdp, one, 126, 0.1, np.random.default_rng(9)).ledger
    b = run_ucrl_vtr_epochs(mdp, fams.family(3), 126, 0.1, np.random.default_rng(9))
    assert np.array_equal(a.regret_curve(), b.regret_curve())
    assert [e.policy.tolist() for e in a.episodes] == [e.policy.tolist() for e in b.episodes]


def test_negative_budget_rejected():
    mdp, fams = general_scenario(seed=5)
    with pytest.raises(ValueError):
        run_arl_gen(mdp, fams, -1, 0.1, np.random.default_rng(0))


def test_threshold_examples():
    assert threshold(0.5, 4) == pytest.approx(1.0)
    assert threshold(0.0, 1) == pytest.approx(0.7071, abs=1e-4)
    assert threshold(0.2, 80) - 0.2 < 1e-10


def test_selection_examples():
    assert select_class([0.9, 0.3, 0.2], 0.35) == (2, False)
    assert select_class([0.4, 0.4, 0.4], 0.4) == (1, False)
    assert select_class([0.9, 0.8, 0.1], 0.2) == (3, False)


def test_perfect_fit_statistic_is_zero():
    from arlab.mdp import EpisodicMdp, TransitionKernel
    from arlab.ucrl_vtr import run_ucrl_vtr, VtrDataset

    P = np.zeros((3, 2, 3))
    for s in range(3):
        P[s, 0, (s + 1) % 3] = 1.0
        P[s, 1, s] = 1.0
    mdp = EpisodicMdp(np.random.default_rng(0).random((3, 2)), TransitionKernel(P), 3)
    other = np.full((3, 2, 3), 1 / 3)
    data = VtrDataset(3, 3)
    run_ucrl_vtr(mdp, [other, P], 8, 0.1, np.random.default_rng(0), dataset=data)
    assert statistic(data, [other, P]) == 0.0


def test_statistics_replayed_from_serialised_dataset(general_run):
    from arlab.ucrl_vtr import VtrDataset

    mdp, fams, res = general_run
    data = VtrDataset.from_dict(res.dataset.to_dict())
    rec = res.selections[4]
    assert rec.epoch == 5
    head = data.head(EpochSchedule(5, 0.1).prior_episodes * mdp.horizon)
    ref = [statistic(head, fams.family(m)) for m in (1, 2, 3)]
    assert np.allclose(rec.statistics, ref, rtol=1e-12)


def test_single_true_family_has_zero_regret():
    mdp, fams = general_scenario(seed=6)
    one = NestedModelFamilies(fams.pool[[fams.true_index]], (1,), 1, 0)
    a = run_arl_gen(mdp, one, 30, 0.1, np.random.default_rng(2)).ledger
    assert a.cumulative_regret == 0.0
