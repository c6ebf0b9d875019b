import numpy as np
import pytest
from conftest import random_table, random_z
from hypothesis import given
from hypothesis import strategies as st

from amr.design import AssignmentDesign
from amr.errors import DataError, DegenerateArm
from amr.estimators import estimate_hajek
from amr.permutation import Statistic, p_value, permutation_test
from amr.spatial import CircleAverageTable


def constant_table(n, D=3, value=4.0):
    mu = np.full((n, D), value)
    return CircleAverageTable(mu, np.ones((n, D), int), np.zeros((n, D), bool), np.arange(D, dtype=float))


def test_constant_raster_gives_p_one():
    t = constant_table(10)
    z = np.array([1, 0] * 5)
    res = permutation_test(t, z, AssignmentDesign.bernoulli(0.5, 3), Statistic.amr_at_d(1), P=200)
    assert res.p_value == 1.0
    assert (res.draws == res.observed).all()


def test_deterministic(rng):
    t = random_table(rng, 16, 4)
    z = random_z(rng, 16)
    design = AssignmentDesign.bernoulli(0.5, 11)
    a = permutation_test(t, z, design, Statistic.mean_amr_over(1, 3), P=300)
    b = permutation_test(t, z, design, Statistic.mean_amr_over(1, 3), P=300)
    assert np.array_equal(a.draws, b.draws)
    assert a.to_dict() == b.to_dict()


def test_joint_statistic_is_mean_of_hajek(rng):
    t = random_table(rng, 20, 5, missing_rate=0.05)
    z = random_z(rng, 20)
    stat = Statistic.mean_amr_over(1, 3)
    val, ok = stat.evaluate(t.mu, t.missing, z[None])
    assert ok[0]
    assert val[0] == pytest.approx(estimate_hajek(t, z).estimate[1:4].mean(), abs=1e-14)


def test_p_value_bounds_and_bands(rng):
    t = random_table(rng, 24, 3)
    z = random_z(rng, 24)
    res = permutation_test(t, z, AssignmentDesign.complete(12, 5), Statistic.amr_at_d(0), P=500)
    assert 1 / 501 <= res.p_value <= 1
    assert res.band_low <= res.band_high
    assert res.P == 500 and res.draws.size == 500


def test_p_value_rule():
    draws = np.arange(1.0, 101.0)
    # observed above every draw: upper tail 1/101
    assert p_value(1000.0, draws, "upper") == pytest.approx(1 / 101)
    assert p_value(1000.0, draws, "lower") == 1.0
    assert p_value(1000.0, draws, "two") == pytest.approx(2 / 101)
    # ties are inclusive on both sides
    assert p_value(50.0, draws, "upper") == pytest.approx(52 / 101)
    assert p_value(50.0, draws, "lower") == pytest.approx(51 / 101)
    with pytest.raises(DataError):
        p_value(0.0, draws, "left")


@given(st.integers(0, 2**32 - 1), st.floats(0, 5), st.floats(0, 5))
def test_p_value_monotone_in_distance_from_median(seed, a, b):
    draws = np.random.default_rng(seed).normal(size=200)
    med = np.median(draws)
    near, far = sorted((a, b))
    for sign in (1, -1):
        assert p_value(med + sign * far, draws) <= p_value(med + sign * near, draws)


def test_degenerate_draws_are_redrawn():
    n = 4
    t = random_table(np.random.default_rng(1), n, 2)
    z = np.array([1, 0, 1, 0])
    res = permutation_test(t, z, AssignmentDesign.bernoulli(0.5, 2), Statistic.amr_at_d(0), P=400)
    # 2 of the 16 four-unit assignments leave an arm empty
    assert res.rejected_draws > 0
    assert np.isfinite(res.draws).all()


def test_redraw_cap():
    t = random_table(np.random.default_rng(1), 3, 1)
    with pytest.raises(DegenerateArm):
        permutation_test(t, [1, 0, 0], AssignmentDesign.bernoulli(1e-9, 2), Statistic.amr_at_d(0), P=100)


def test_guards(rng):
    t = random_table(rng, 8, 2)
    z = random_z(rng, 8)
    d = AssignmentDesign.bernoulli(0.5, 0)
    with pytest.raises(DataError):
        permutation_test(t, z, d, Statistic.amr_at_d(0), P=99)
    with pytest.raises(DataError):
        permutation_test(t, z, d, Statistic.amr_at_d(5), P=100)
    with pytest.raises(DegenerateArm):
        permutation_test(t, np.ones(8, int), d, Statistic.amr_at_d(0), P=100)


def test_statistic_parse():
    d = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    assert Statistic.parse("at:1.5", d) == Statistic(3, 3)
    assert Statistic.parse("mean:0.5:1.5", d) == Statistic(1, 3)
    for bad in ("at:0.7", "mean:3:4", "median:1", "at:x"):
        with pytest.raises(DataError):
            Statistic.parse(bad, d)


def test_band_validity_under_sharp_null():
    # the observed assignment is itself a draw from the design, so it falls
    # outside the central 95% band about 5% of the time
    rng = np.random.default_rng(7)
    t = random_table(rng, 30, 1)
    design = AssignmentDesign.complete(15, 99)
    outside = 0
    trials = 300
    for s in range(trials):
        z = np.zeros(30, int)
        z[np.random.default_rng(s).permutation(30)[:15]] = 1
        res = permutation_test(t, z, design, Statistic.amr_at_d(0), P=200)
        outside += not (res.band_low <= res.observed <= res.band_high)
    assert outside / trials <= 0.05 + 3 * np.sqrt(0.05 * 0.95 / trials)
