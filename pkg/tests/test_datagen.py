import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartlab.datagen import (TrialDataset, empirical_summary, read_csv, simulate_trial, to_csv,
                              write_csv)
from smartlab.errors import DataError
from smartlab.scenarios import get_scenario
from smartlab.trial import CONTINUE, Cohort, TrialDesign, allocation_plan


def test_sigma_zero_outcomes_equal_sequence_means():
    sc = get_scenario("table1-s2", sigma=0.0)
    data = simulate_trial(TrialDesign(400, 0.5), sc, 1)
    for rec in data.records():
        assert rec.y == sc.seq_mean(rec.cohort, rec.a1, rec.a2)


def test_arm_counts_match_plan():
    design = TrialDesign(1000, 0.5)
    data = simulate_trial(design, get_scenario("table1-s3"), 12345)
    plan = allocation_plan(design)
    assert len(data) == 1500
    for cohort in Cohort:
        for j, count in plan.counts[cohort].items():
            assert np.count_nonzero((data.cohort == cohort.number) & (data.a1 == j)) == count


def test_large_n_response_rate():
    data = simulate_trial(TrialDesign(200_000, 0.5), get_scenario("table1-s2"), 7)
    sel = (data.cohort == 1) & (data.a1 == 1)
    assert abs(data.r[sel].mean() - 0.4) < 0.005


def test_large_n_sequence_means_converge():
    sc = get_scenario("table1-s4")
    data = simulate_trial(TrialDesign(200_000, 0.5), sc, 8)
    summ = empirical_summary(data)
    for cohort, arms in summ.items():
        for j, arm in arms.items():
            se_pi = np.sqrt(sc.response_rate(cohort, j) * (1 - sc.response_rate(cohort, j)) / arm.n)
            assert abs(arm.response_rate - sc.response_rate(cohort, j)) < 3 * se_pi + 1e-12
            for k, m in arm.seq_mean.items():
                se = sc.sigma / np.sqrt(arm.seq_n[k])
                assert abs(m - sc.seq_mean(cohort, j, k)) < 3 * se


def test_summary_reproduces_sigma_zero_means_and_time_effect():
    sc = get_scenario("table1-s4", sigma=0.0)
    summ = empirical_summary(simulate_trial(TrialDesign(1000, 0.5), sc, 3))
    for cohort, arms in summ.items():
        for j, arm in arms.items():
            for k, m in arm.seq_mean.items():
                assert m == sc.seq_mean(cohort, j, k)
    big = empirical_summary(simulate_trial(TrialDesign(40_000, 0.5), get_scenario("table1-s4"), 3))
    assert abs(big[Cohort.C2][1].response_rate - 0.5) < 0.02


def test_summary_marks_empty_arm():
    data = simulate_trial(TrialDesign(200, 0.0), get_scenario("table1-s2"), 1)
    summ = empirical_summary(data)
    assert summ[Cohort.C1] == {1: None, 2: None}
    with pytest.raises(DataError):
        empirical_summary(TrialDataset([], [], [], [], []))


def test_determinism_and_seed_sensitivity():
    design, sc = TrialDesign(600, 0.3), get_scenario("table1-s5")
    a = simulate_trial(design, sc, 99)
    assert a == simulate_trial(design, sc, 99)
    assert a != simulate_trial(design, sc, 100)
    assert a != simulate_trial(design, sc, 99, path=(1,))


def test_binary_outcomes_and_csv_roundtrip(tmp_path):
    data = simulate_trial(TrialDesign(500, 0.5), get_scenario("table2-s3"), 4)
    assert set(np.unique(data.y)) <= {0.0, 1.0}
    path = tmp_path / "d.csv"
    write_csv(data, path)
    back = read_csv(path)
    assert back == data and back.outcome == "binary"
    assert to_csv(back) == path.read_text()


def test_bernoulli_allocation_mode():
    design = TrialDesign(2000, 0.5, allocation="bernoulli")
    data = simulate_trial(design, get_scenario("table1-s2"), 5)
    c2 = data.cohort == 2
    assert abs(np.mean(data.a1[c2] == 3) - 0.5) < 0.06


@pytest.mark.parametrize("body,match", [
    ("cohort,a1,r,a2,y\nc1,a13,0,a13,1.0\n", "row 2"),
    ("cohort,a1,r,a2,y\nc2,a11,0,a21,1.0\n", "row 2"),
    ("cohort,a1,r,a2,y\nc2,a11,1,a21\n", "row 2"),
    ("cohort,a1,r,y\n", "header"),
    ("cohort,a1,r,a2,y\n", "no rows"),
])
def test_read_csv_errors(tmp_path, body, match):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataError, match=match):
        read_csv(path)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(50, 400), r=st.sampled_from([0.3, 0.5, 0.7]),
       name=st.sampled_from(["table1-s2", "table1-s4", "table2-s2"]))
def test_nonresponders_continue(seed, n, r, name):
    data = simulate_trial(TrialDesign(2 * n, r), get_scenario(name), seed)
    assert np.all((data.r == 0) == (data.a2 == CONTINUE))
    assert np.all(data.a1[data.cohort == 1] != 3)
