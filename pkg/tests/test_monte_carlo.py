"""Seeded Monte Carlo oracles on the simulation design (slow: ~3 minutes)."""
import numpy as np
import pytest

from bjqlearn.bj_boost import BoostConfig, Learner, bj_boost_fit, cv_tune
from bjqlearn.q_learning import Method, fit_stage_q
from bjqlearn.simulation import gen_single_stage

pytestmark = pytest.mark.slow
SEEDS = range(20)


def test_tree_q_tracks_oracle_q():
    cors = []
    for s in SEEDS:
        ds, oracle = gen_single_stage(1000, s)
        X = ds.stage_data(1).X
        pred = fit_stage_q(ds, 1, method=Method.BJ_TREE).predict(X)
        stacked_pred = np.concatenate([pred[0], pred[1]])
        stacked_true = np.concatenate([oracle.values[:, 0], oracle.values[:, 1]])
        cors.append(np.corrcoef(stacked_pred, stacked_true)[0, 1])
    assert np.median(cors) >= 0.9


def test_trees_beat_componentwise_on_held_out_q():
    wins = 0
    for s in SEEDS:
        ds, _ = gen_single_stage(1000, s)
        test, oracle = gen_single_stage(2000, 1000 + s)
        sd, X_test = ds.stage_data(1), test.stage_data(1).X
        err = {}
        for learner in Learner:
            err[learner] = 0.0
            for a in (0, 1):
                arm = sd.treatment == a
                m = bj_boost_fit(sd.X[arm], sd.time[arm], sd.event[arm], BoostConfig(learner=learner))
                err[learner] += np.mean((m.predict(X_test) - oracle.values[:, a]) ** 2)
        wins += err[Learner.TREE] < err[Learner.COMPONENTWISE_LS]
    assert wins > len(SEEDS) / 2


def test_fifty_tree_iterations_underfit_the_oracle():
    for s in range(5):
        ds, _ = gen_single_stage(1000, s)
        test, oracle = gen_single_stage(2000, 500 + s)
        sd = ds.stage_data(1)
        arm = sd.treatment == 0
        err = [
            np.mean((bj_boost_fit(sd.X[arm], sd.time[arm], sd.event[arm], BoostConfig(iterations=m))
                     .predict(test.stage_data(1).X) - oracle.values[:, 0]) ** 2)
            for m in (50, 500)
        ]
        assert err[1] < err[0]


@pytest.mark.xfail(strict=True, reason="validation MSE on events only is biased toward short times and "
                                       "prefers M = 50 although M = 500 is closer to the oracle")
def test_cv_prefers_more_iterations():
    grid = [BoostConfig(iterations=50), BoostConfig(iterations=500)]
    picks = []
    for s in SEEDS:
        ds, _ = gen_single_stage(1000, s)
        sd = ds.stage_data(1)
        arm = sd.treatment == 0
        picks.append(cv_tune(sd.X[arm], sd.time[arm], sd.event[arm], grid, seed=s).iterations)
    assert sum(p == 500 for p in picks) > len(picks) / 2
