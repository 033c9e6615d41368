import numpy as np
import pytest

from bjqlearn.ingest import (
    CsvSchema,
    IngestError,
    read_long_csv,
    read_trial_csv,
    synthetic_two_stage_split,
    write_long_csv,
)

SCHEMA = CsvSchema(time="days", event="cens", treatment="arm", covariates=("age",))


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_row_toy(tmp_path):
    ds = read_trial_csv(write(tmp_path, "days,cens,arm,age\n100,1,0,40\n200,0,1,50\n300,1,1,60\n"), SCHEMA)
    assert len(ds) == 3 and ds.num_stages == 1
    assert ds.subjects[1].stage(1).event is False
    assert ds.action_set == (0, 1)


def test_unmapped_code_names_code_and_row(tmp_path):
    p = write(tmp_path, "days,cens,arm,age\n100,1,1,40\n200,0,7,50\n")
    schema = CsvSchema("days", "cens", "arm", ("age",), treatment_map={"1": 1, "3": 0})
    with pytest.raises(IngestError, match=r"row 3: treatment code '7' is not mapped"):
        read_trial_csv(p, schema)


def test_mapping_and_dropping(tmp_path):
    p = write(tmp_path, "days,cens,arms,age\n1,1,3,40\n2,0,1,50\n3,1,0,60\n")
    schema = CsvSchema(covariates=("age",), treatment_map={"3": 0, "1": 1}, drop_codes=frozenset({"0"}))
    ds = read_trial_csv(p, schema)
    assert [s.stage(1).treatment for s in ds.subjects] == [0, 1]


def test_missing_values(tmp_path):
    p = write(tmp_path, "days,cens,arm,age\n1,1,0,40\n2,0,1,NA\n3,1,1,60\n")
    with pytest.raises(IngestError, match="missing value"):
        read_trial_csv(p, SCHEMA)
    ds = read_trial_csv(p, CsvSchema("days", "cens", "arm", ("age",), impute_missing=True))
    assert ds.subjects[1].stage(1).history.values == (50.0,)


def test_unknown_column(tmp_path):
    with pytest.raises(IngestError, match="unknown column 'age'"):
        read_trial_csv(write(tmp_path, "days,cens,arm\n1,1,0\n"), SCHEMA)


def test_bad_number_has_context(tmp_path):
    with pytest.raises(IngestError, match="row 2, column 'age'"):
        read_trial_csv(write(tmp_path, "days,cens,arm,age\n1,1,0,old\n"), SCHEMA)


def _one(tmp_path, y, d, arm=1):
    return read_trial_csv(write(tmp_path, f"days,cens,arm,age\n{y},{d},{arm},40\n"), SCHEMA)


def test_split_event_before_cutoff(tmp_path):
    split = synthetic_two_stage_split(_one(tmp_path, 100, 1), 150, 150, 0.7, 0)
    s1, s2 = split.subjects[0].stages
    assert (s1.observed_time, s1.event, s2.reached) == (100.0, True, False)


def test_split_survivor_past_cutoff(tmp_path):
    split = synthetic_two_stage_split(_one(tmp_path, 400, 0), 150, 150, 0.7, 0)
    s1, s2 = split.subjects[0].stages
    assert (s1.observed_time, s1.event) == (150.0, True)
    assert (s2.observed_time, s2.event, s2.reached) == (250.0, False, True)


def test_keep_prob_one_keeps_treatment(tmp_path):
    rng = np.random.default_rng(0)
    rows = "".join(f"{rng.uniform(50, 400):.1f},1,{i % 2},{40 + i}\n" for i in range(50))
    ds = read_trial_csv(write(tmp_path, "days,cens,arm,age\n" + rows), SCHEMA)
    split = synthetic_two_stage_split(ds, keep_prob=1.0, seed=3)
    assert all(s.stage(2).treatment == s.stage(1).treatment for s in split.subjects)


def test_split_defaults_follow_protocol():
    import inspect

    sig = inspect.signature(synthetic_two_stage_split).parameters
    assert (sig["cutoff_low"].default, sig["cutoff_high"].default, sig["keep_prob"].default) == (120.0, 180.0, 0.7)


def test_long_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    rows = "".join(f"{rng.uniform(50, 400):.1f},{i % 3 > 0:d},{i % 2},{40 + i}\n" for i in range(30))
    ds = read_trial_csv(write(tmp_path, "days,cens,arm,age\n" + rows), SCHEMA)
    split = synthetic_two_stage_split(ds, seed=2)
    write_long_csv(split, tmp_path / "long.csv")
    back = read_long_csv(tmp_path / "long.csv")
    for a, b in zip(split.subjects, back.subjects):
        for ra, rb in zip(a.stages, b.stages):
            assert ra.history == rb.history
            assert (ra.treatment, ra.observed_time, ra.event, ra.reached) == (rb.treatment, rb.observed_time, rb.event, rb.reached)


def test_reconstruction_and_all_paths_present(tmp_path):
    rng = np.random.default_rng(5)
    rows = "".join(f"{rng.uniform(50, 600):.1f},{int(rng.random() < 0.6)},{i % 2},{40 + i % 30}\n" for i in range(500))
    ds = read_trial_csv(write(tmp_path, "days,cens,arm,age\n" + rows), SCHEMA)
    split = synthetic_two_stage_split(ds, seed=9)
    paths = set()
    for orig, s in zip(ds.subjects, split.subjects):
        r1, r2 = s.stages
        if r2.reached:
            assert r1.observed_time + r2.observed_time == pytest.approx(orig.stage(1).observed_time, abs=1e-9)
            assert r2.event == orig.stage(1).event
            paths.add((r1.treatment, r2.treatment))
    assert paths == {(0, 0), (0, 1), (1, 0), (1, 1)}
