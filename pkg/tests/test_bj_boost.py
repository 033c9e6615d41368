import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bjqlearn.base_learners import RegressionTree, componentwise_ls_fit, tree_fit
from bjqlearn.bj_boost import (
    BoostConfig,
    BoostModel,
    DivergenceError,
    InitMode,
    Learner,
    LinearModel,
    Standardizer,
    bj_boost_fit,
    bj_impute,
    bj_linear_fit,
    cv_tune,
    predict,
)
from bjqlearn.kaplan_meier import km_fit


def l2_boost_oracle(X, y, config):
    """Plain L2 boosting on fully observed targets (no censoring logic)."""
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (X - mean) / sd
    D = np.column_stack([np.ones(len(y)), Z]) if config.learner is Learner.COMPONENTWISE_LS else Z
    f = np.full(len(y), y.mean())
    for _ in range(config.iterations):
        u = y - f
        if config.learner is Learner.COMPONENTWISE_LS:
            g = componentwise_ls_fit(D, u)
        else:
            g = tree_fit(D, u, config.max_depth, config.min_leaf)
        f = f + config.learning_rate * g.predict(D)
    return f


# --- imputation ---------------------------------------------------------------

def test_impute_identity_when_uncensored():
    y = np.array([3.0, 1.0, 2.0])
    curve = km_fit(y - 2.0, np.ones(3, bool))
    np.testing.assert_array_equal(bj_impute(y, np.ones(3, bool), np.full(3, 2.0), curve), y)


def test_impute_three_point_example():
    curve = km_fit([1.0, 2.0, 3.0], [True, False, True])
    out = bj_impute([12.0], [False], [10.0], curve)
    assert out[0] == 13.0


def test_impute_degenerate_tail_falls_back():
    curve = km_fit([1.0, 2.0, 3.0], [True, False, True])
    assert bj_impute([13.0], [False], [10.0], curve)[0] == 13.0


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_imputed_never_below_observed(seed):
    rng = np.random.default_rng(seed)
    n = 25
    y = rng.exponential(5, n)
    d = rng.random(n) < 0.6
    d[0] = True
    f = rng.normal(5, 1, n)
    ystar = bj_impute(y, d, f, km_fit(y - f, d))
    assert np.all(ystar >= y)
    np.testing.assert_array_equal(ystar[d], y[d])


# --- boosting -----------------------------------------------------------------

@pytest.mark.parametrize("learner", [Learner.COMPONENTWISE_LS, Learner.TREE])
def test_zero_censoring_matches_l2_boosting_bitwise(learner):
    rng = np.random.default_rng(11)
    X = rng.normal(size=(60, 3))
    y = X[:, 0] - 2 * X[:, 1] * (X[:, 2] > 0) + rng.normal(size=60)
    cfg = BoostConfig(iterations=40, learning_rate=0.1, learner=learner)
    model = bj_boost_fit(X, y, np.ones(60, bool), cfg)
    np.testing.assert_array_equal(model.predict(X), l2_boost_oracle(X, y, cfg))


def test_converges_to_least_squares_on_orthonormal_design():
    rng = np.random.default_rng(5)
    Q, _ = np.linalg.qr(rng.normal(size=(100, 2)))
    X = Q * 10.0
    y = 3.0 + 2.0 * X[:, 0] - 1.0 * X[:, 1] + rng.normal(size=100)
    model = bj_boost_fit(X, y, np.ones(100, bool),
                         BoostConfig(iterations=2000, learning_rate=0.1, learner=Learner.COMPONENTWISE_LS))
    D = np.column_stack([np.ones(100), X])
    ols = D @ np.linalg.lstsq(D, y, rcond=None)[0]
    assert np.max(np.abs(model.predict(X) - ols)) < 1e-3


def test_single_tiny_step_stays_near_mean():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 2))
    y = rng.normal(5, 2, 30)
    model = bj_boost_fit(X, y, np.ones(30, bool),
                         BoostConfig(iterations=1, learning_rate=1e-9, learner=Learner.COMPONENTWISE_LS))
    np.testing.assert_allclose(model.predict(X), y.mean(), atol=1e-7)


def test_least_squares_init_starts_from_ols():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 2))
    y = 1 + X @ [1.0, -1.0] + rng.normal(size=40) * 0.1
    cfg = BoostConfig(iterations=1, learning_rate=1e-12, learner=Learner.COMPONENTWISE_LS,
                      init_mode=InitMode.LEAST_SQUARES)
    model = bj_boost_fit(X, y, np.ones(40, bool), cfg)
    D = np.column_stack([np.ones(40), X])
    np.testing.assert_allclose(model.predict(X), D @ np.linalg.lstsq(D, y, rcond=None)[0], atol=1e-8)


def test_twin_mode_restricts_second_round():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 6))
    y = 2 * X[:, 0] + rng.normal(size=80) * 0.1
    base = BoostConfig(iterations=30, learner=Learner.COMPONENTWISE_LS)
    one = bj_boost_fit(X, y, np.ones(80, bool), base)
    twin = bj_boost_fit(X, y, np.ones(80, bool), BoostConfig(iterations=30, learner=Learner.COMPONENTWISE_LS, twin=True))
    assert twin.selected_covariates() <= one.selected_covariates()


def test_boost_with_censoring_runs_and_roundtrips():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(80, 3))
    t = 10 + 2 * X[:, 0] + rng.normal(size=80)
    c = rng.uniform(8, 14, 80)
    y, d = np.minimum(t, c), t <= c
    model = bj_boost_fit(X, y, d, BoostConfig(iterations=50))
    back = BoostModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(back.predict(X), model.predict(X))
    assert predict(model, X[0]) == model.predict(X[:1])[0]


def test_input_validation():
    X = np.zeros((12, 1))
    with pytest.raises(ValueError, match="all censored"):
        bj_boost_fit(X, np.ones(12), np.zeros(12, bool))
    with pytest.raises(ValueError, match="at least 10"):
        bj_boost_fit(X[:5], np.ones(5), np.ones(5, bool))
    with pytest.raises(ValueError, match="finite"):
        bj_boost_fit(np.full((12, 1), np.nan), np.ones(12), np.ones(12, bool))
    with pytest.raises(ValueError):
        BoostConfig(learning_rate=0.0)


def test_divergence_guard():
    X = np.linspace(-1, 1, 20).reshape(-1, 1)
    y = np.full(20, 1e9)
    with pytest.raises(DivergenceError):
        bj_boost_fit(X, y + X[:, 0] * 1e9, np.ones(20, bool),
                     BoostConfig(iterations=5, learning_rate=1.0, learner=Learner.COMPONENTWISE_LS))


def test_config_round_trip():
    cfg = BoostConfig(iterations=7, learning_rate=0.3, learner="componentwise_ls", twin=True)
    assert BoostConfig.from_dict(cfg.to_dict()) == cfg


# --- prediction examples -------------------------------------------------------

def _identity_std(p):
    return Standardizer(np.zeros(p), np.ones(p))


def test_offset_only_model():
    m = BoostModel(4.5, 0.1, Learner.TREE, _identity_std(2))
    assert predict(m, [1.0, 2.0]) == 4.5


def test_linear_model_prediction():
    assert predict(LinearModel(1.0, np.array([2.0])), [3.0]) == 7.0


def test_stump_term_left_route():
    stump = RegressionTree(np.array([0, -1, -1]), np.array([0.5, 0, 0]), np.array([1, -1, -1]),
                           np.array([2, -1, -1]), np.array([0.0, -2.0, 2.0]), 1)
    m = BoostModel(10.0, 0.1, Learner.TREE, _identity_std(1), (stump,))
    assert predict(m, [0.0]) == 10.0 + 0.1 * -2.0


# --- classical Buckley-James ----------------------------------------------------

@given(st.integers(0, 10_000))
@settings(max_examples=100, deadline=None)
def test_linear_fit_equals_ols_without_censoring(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 3))
    y = X @ rng.normal(size=3) + rng.normal(size=30)
    m = bj_linear_fit(X, y, np.ones(30, bool))
    D = np.column_stack([np.ones(30), X])
    coef = np.linalg.lstsq(D, y, rcond=None)[0]
    assert m.iterations == 1 and m.converged
    assert abs(m.intercept - coef[0]) < 1e-10
    assert np.max(np.abs(m.coefficients - coef[1:])) < 1e-10


def test_intercept_only_fixed_point():
    # residual KM puts the censored row's tail on the largest event: Y* = 3
    m = bj_linear_fit(np.zeros((3, 0)), [1.0, 2.0, 3.0], [True, False, True])
    assert m.intercept == pytest.approx(7 / 3, abs=1e-12)
    grid = np.linspace(1.5, 3.0, 1501)
    fixed = [mu for mu in grid
             if abs(np.mean(bj_impute([1.0, 2.0, 3.0], [True, False, True], np.full(3, mu),
                                      km_fit(np.array([1.0, 2.0, 3.0]) - mu, [True, False, True]))) - mu) < 1e-3]
    assert min(abs(mu - m.intercept) for mu in fixed) < 1e-3


def test_rank_deficient_design_rejected():
    X = np.column_stack([np.arange(10.0), np.arange(10.0)])
    with pytest.raises(ValueError, match="rank"):
        bj_linear_fit(X, np.arange(10.0), np.ones(10, bool))


def test_linear_fit_recovers_truth_under_censoring():
    truth = np.array([5.0, 1.0, -0.5])
    est = []
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        X = rng.normal(size=(500, 2))
        t = truth[0] + X @ truth[1:] + rng.normal(size=500)
        c = truth[0] + rng.normal(0.8, 1.5, 500)
        y, d = np.minimum(t, c), t <= c
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = bj_linear_fit(X, y, d)
        est.append([m.intercept, *m.coefficients])
    est = np.array(est)
    se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - truth) < 3 * se + 1e-3)


# --- cross-validation -----------------------------------------------------------

def test_cv_single_config():
    cfg = BoostConfig(iterations=3)
    assert cv_tune(np.zeros((20, 1)), np.ones(20), np.ones(20, bool), [cfg]) is cfg


def test_cv_dominant_config_wins():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(100, 2))
    y = 5 * X[:, 0] + rng.normal(size=100) * 0.1
    good = BoostConfig(iterations=200, learning_rate=0.3, learner=Learner.COMPONENTWISE_LS)
    bad = BoostConfig(iterations=1, learning_rate=0.01, learner=Learner.COMPONENTWISE_LS)
    assert cv_tune(X, y, np.ones(100, bool), [bad, good], folds=5, seed=1) == good


def test_cv_is_deterministic():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(60, 2))
    y = X[:, 0] + rng.normal(size=60)
    d = rng.random(60) < 0.7
    grid = [BoostConfig(iterations=m, learner=Learner.COMPONENTWISE_LS) for m in (5, 20, 80)]
    assert cv_tune(X, y, d, grid, seed=3) == cv_tune(X, y, d, grid, seed=3)
