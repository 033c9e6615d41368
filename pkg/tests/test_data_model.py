import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bjqlearn.data_model import (
    CovariateVector,
    StageRecord,
    Subject,
    TrialDataset,
    build_history,
    validate_dataset,
    with_past_actions,
)


def make(stage_actions, events=None, reached=None):
    """One subject per column of ``stage_actions`` (rows are stages)."""
    K = len(stage_actions)
    n = len(stage_actions[0])
    subjects = []
    for i in range(n):
        recs = []
        for k in range(K):
            h = build_history([("x", float(i))], [stage_actions[l][i] for l in range(k)], (0, 1),
                              stage_covariates=[[] for _ in range(k)])
            ev = True if events is None else events[k][i]
            rc = True if reached is None else reached[k][i]
            recs.append(StageRecord(k + 1, h, stage_actions[k][i], 1.0 + i, ev, rc))
        subjects.append(Subject(str(i), recs))
    return TrialDataset(subjects, (0, 1), K)


def test_both_arms_everywhere_is_clean():
    report = validate_dataset(make([[0, 1, 0, 1], [1, 0, 0, 1]]))
    assert report.ok and not report.violations


def test_missing_action_reported():
    report = validate_dataset(make([[0, 1, 0, 1], [1, 1, 1, 1]]))
    assert "action 0 unobserved at stage 2" in report.violations


def test_all_censored_stage_warns():
    ds = make([[0, 1, 0, 1]], events=[[False] * 4])
    report = validate_dataset(ds)
    assert report.stages[0].censoring_rate == 1.0
    assert report.warnings


def test_non_monotone_reached_reported():
    ds = make([[0, 1], [0, 1], [0, 1]], reached=[[True, True], [False, True], [True, True]])
    assert any("reached" in v for v in validate_dataset(ds).violations)


def test_non_finite_covariate_reported():
    h = CovariateVector((float("nan"),), ("x",))
    ds = TrialDataset([Subject("a", [StageRecord(1, h, 0, 1.0, True)]),
                       Subject("b", [StageRecord(1, CovariateVector((1.0,), ("x",)), 1, 1.0, True)])], (0, 1), 1)
    assert not validate_dataset(ds).ok


def test_history_layout():
    h = build_history([("age", 50.0)], [1], (0, 1, 2), stage_covariates=[[("t1", 2.0)], [("t2", 3.0)]])
    assert h.names == ("age", "t1", "A1=1", "A1=2", "t2")
    assert h.values == (50.0, 2.0, 1.0, 0.0, 3.0)


def test_with_past_actions_rewrites_indicators():
    h = build_history([("age", 50.0)], [1], (0, 1), stage_covariates=[[], []])
    assert with_past_actions(h, [0], (0, 1)).values == (50.0, 0.0)


def test_record_invariants():
    with pytest.raises(ValueError):
        StageRecord(1, CovariateVector((1.0,), ("x",)), 0, -1.0, True)
    with pytest.raises(ValueError):
        CovariateVector((), ())


def test_stage_data_skips_unreached():
    ds = make([[0, 1, 0], [1, 0, 1]], reached=[[True] * 3, [True, False, True]])
    sd = ds.stage_data(2)
    np.testing.assert_array_equal(sd.rows, [0, 2])


@given(st.lists(st.tuples(st.sampled_from([0, 1]), st.sampled_from([0, 1]), st.booleans()), min_size=4, max_size=30))
@settings(max_examples=100, deadline=None)
def test_valid_random_datasets_have_no_violations(rows):
    a1 = [r[0] for r in rows] + [0, 1]
    a2 = [r[1] for r in rows] + [0, 1]
    ev = [r[2] for r in rows] + [True, True]
    ds = make([a1, a2], events=[ev, ev])
    report = validate_dataset(ds)
    assert report.ok
    assert report == validate_dataset(ds)
