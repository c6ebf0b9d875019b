import numpy as np
import pytest
from conftest import random_table, random_z
from hypothesis import given
from hypothesis import strategies as st
from oracles import hc0_two_group

from amr.errors import DataError, DegenerateArm, SingularFit
from amr.estimators import estimate_hajek
from amr.smoothing import (
    SmoothSpec,
    _fold_ids,
    cv_score,
    hac_local_variance,
    local_linear,
    select_bandwidth,
    smooth_amr,
)
from amr.spatial import CircleAverageTable, DistanceGrid
from amr.variance import NeighborhoodSpec, build_neighborhoods


def linear_amr_table(rng, n, distances, a, b, missing_rate=0.0):
    """Noisy circle means whose Hajek curve is exactly ``a + b d``."""
    D = len(distances)
    mu = rng.normal(size=(n, D)) + np.sin(distances)[None, :]
    z = random_z(rng, n)
    missing = rng.random((n, D)) < missing_rate
    mu[missing] = np.nan
    table = CircleAverageTable(mu, np.where(missing, 0, 5), missing, np.asarray(distances, float))
    gap = (a + b * table.distances) - estimate_hajek(table, z).estimate
    mu = mu.copy()
    mu[z == 1] += gap
    return CircleAverageTable(mu, table.ring_count, missing, table.distances), z


@given(st.integers(0, 2**32 - 1), st.floats(-2, 2), st.floats(-1, 1), st.floats(0.3, 5))
def test_linear_amr_reproduced(seed, a, b, h):
    rng = np.random.default_rng(seed)
    d = np.arange(0, 6.0)
    table, z = linear_amr_table(rng, 20, d, a, b)
    c = smooth_amr(table, z, DistanceGrid(d, 0), SmoothSpec(bandwidth=h))
    np.testing.assert_allclose(c.estimate, a + b * d, atol=1e-8)


def test_linear_amr_off_grid_targets(rng):
    d = np.arange(0, 6.0)
    table, z = linear_amr_table(rng, 25, d, 0.3, -0.2)
    targets = np.linspace(0, 5, 23)
    c = smooth_amr(table, z, DistanceGrid(d, 0), SmoothSpec(bandwidth=1.3), targets=targets)
    np.testing.assert_allclose(c.estimate, 0.3 - 0.2 * targets, atol=1e-8)


@given(st.integers(0, 2**32 - 1))
def test_small_bandwidth_recovers_hajek(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng, 30, 7)
    z = random_z(rng, 30)
    dg = DistanceGrid(table.distances, 0)
    c = smooth_amr(table, z, dg, SmoothSpec(bandwidth=0.1))
    np.testing.assert_allclose(c.estimate, estimate_hajek(table, z).estimate, atol=1e-6)
    assert c.flags.get("ridge_at")


def test_constant_means_give_zero_curve(rng):
    mu = np.full((12, 5), 3.0) + np.arange(5.0)[None, :]
    table = CircleAverageTable(mu, np.ones_like(mu, int), np.zeros_like(mu, bool), np.arange(5.0))
    c = smooth_amr(table, random_z(rng, 12), DistanceGrid(np.arange(5.0), 0), SmoothSpec(bandwidth=1.0))
    np.testing.assert_allclose(c.estimate, 0.0, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(0.4, 4))
def test_weighted_residual_orthogonality(seed, h):
    rng = np.random.default_rng(seed)
    table = random_table(rng, 25, 6, missing_rate=0.1)
    z = random_z(rng, 25)
    for fit in local_linear(table, z, h):
        assert not fit.ridged
        score = fit.X.T @ (fit.w * fit.resid)
        scale = np.abs(fit.X).T @ (fit.w * np.abs(fit.resid)) + 1e-300
        assert (np.abs(score) / scale <= 1e-8).all()


def test_curve_is_continuous(rng):
    table = random_table(rng, 30, 8)
    z = random_z(rng, 30)
    dg = DistanceGrid(table.distances, 0)
    fine = np.linspace(0, 7, 1401)
    c = smooth_amr(table, z, dg, SmoothSpec(bandwidth=1.0), targets=fine)
    jumps = np.abs(np.diff(c.estimate))
    # refining the grid tenfold shrinks the largest step about tenfold
    coarse = smooth_amr(table, z, dg, SmoothSpec(bandwidth=1.0), targets=fine[::10])
    assert jumps.max() < 0.2 * np.abs(np.diff(coarse.estimate)).max()


def test_singular_fit_when_bandwidth_too_small(rng):
    table = random_table(rng, 10, 4)
    with pytest.raises(SingularFit):
        smooth_amr(table, random_z(rng, 10), DistanceGrid(table.distances, 0), SmoothSpec(bandwidth=0.01))


def test_single_distance_is_singular(rng):
    table = random_table(rng, 10, 1)
    with pytest.raises(SingularFit):
        local_linear(table, random_z(rng, 10), 1.0)


def test_degenerate_arm(rng):
    table = random_table(rng, 10, 3)
    with pytest.raises(DegenerateArm):
        local_linear(table, np.ones(10, int), 1.0)


def test_spec_validation():
    with pytest.raises(DataError):
        SmoothSpec(kernel="epanechnikov")
    with pytest.raises(DataError):
        SmoothSpec(bandwidth=0.0)
    with pytest.raises(DataError):
        SmoothSpec(bandwidth="cv", cv_folds=1)
    with pytest.raises(DataError):
        SmoothSpec(candidate_bandwidths=(1.0, -1.0))
    assert SmoothSpec().candidates(0.5) == (0.125, 0.25, 0.5, 1.0, 2.0)


def test_folds_are_balanced_and_deterministic():
    ids = _fold_ids(23, 5, seed=4)
    assert np.array_equal(ids, _fold_ids(23, 5, seed=4))
    assert sorted(np.bincount(ids).tolist()) == [4, 4, 5, 5, 5]


def held_out_mse(table, z, h, folds, seed):
    """Refit by plain weighted least squares on the training units' rows."""
    ids = _fold_ids(table.n, folds, seed)
    d = table.distances
    errs = []
    for f in range(folds):
        train = ids != f
        for k, target in enumerate(d):
            rows, y = [], []
            for i in np.flatnonzero(train):
                for kk in range(len(d)):
                    if not table.missing[i, kk]:
                        delta = d[kk] - target
                        w = np.exp(-0.5 * (delta / h) ** 2)
                        sw = np.sqrt(w)
                        rows.append(sw * np.array([1, z[i], delta, z[i] * delta]))
                        y.append(sw * table.mu[i, kk])
            beta = np.linalg.lstsq(np.array(rows), np.array(y), rcond=None)[0]
            for i in np.flatnonzero(~train):
                if not table.missing[i, k]:
                    errs.append(table.mu[i, k] - beta[0] - beta[1] * z[i])
    return float(np.mean(np.square(errs)))


def test_cv_score_matches_direct_refits(rng):
    table = random_table(rng, 15, 5, missing_rate=0.1)
    z = random_z(rng, 15)
    assert cv_score(table, z, 0.8, folds=3, seed=2) == pytest.approx(held_out_mse(table, z, 0.8, 3, 2), rel=1e-9)


def test_cv_selects_grid_minimizer(rng):
    # smooth AMR plus unit noise: the held-out-MSE minimizer over an exhaustive grid
    d = np.arange(0, 10.0)
    n = 40
    z = random_z(rng, n)
    truth = np.exp(-((d - 3) ** 2) / 8)
    mu = 0.5 * np.cos(d / 3)[None, :] + z[:, None] * truth[None, :] + rng.normal(scale=0.6, size=(n, len(d)))
    table = CircleAverageTable(mu, np.ones_like(mu, int), np.zeros_like(mu, bool), d)
    grid = (0.3, 0.6, 1.0, 1.5, 2.5, 4.0)
    best, scores = select_bandwidth(table, z, grid, folds=5, seed=1)
    oracle = {h: held_out_mse(table, z, h, 5, 1) for h in grid}
    assert best == min(oracle, key=oracle.get)
    for h in grid:
        assert scores[h] == pytest.approx(oracle[h], rel=1e-9)
    c = smooth_amr(table, z, DistanceGrid(d, 0), SmoothSpec(candidate_bandwidths=grid, cv_seed=1))
    assert c.flags["bandwidth"] == best


def test_hac_scores_reduce_to_hc0_for_singletons(rng):
    """With the kernel reaching one distance only, the local fit is the two-group
    regression, so singleton neighborhoods give the HC0 formula."""
    table = random_table(rng, 20, 4)
    z = random_z(rng, 20)
    fit = local_linear(table, z, 0.1, targets=[2.0])[0]
    var, _ = hac_local_variance(fit, np.eye(20, dtype=bool))
    assert var == pytest.approx(hc0_two_group(table.mu[:, 2], z), rel=1e-6)


def test_smoothed_curve_inference(rng):
    table = random_table(rng, 30, 5)
    z = random_z(rng, 30)
    xy = rng.uniform(0, 20, size=(30, 2))
    c = smooth_amr(table, z, DistanceGrid(table.distances, 0), SmoothSpec(bandwidth=1.0),
                   pts=xy, hband=NeighborhoodSpec.constant(2.0))
    assert c.method == "Smoothed"
    assert (c.se > 0).all()
    assert (c.ci_low <= c.estimate).all() and (c.estimate <= c.ci_high).all()
    singleton = smooth_amr(table, z, DistanceGrid(table.distances, 0), SmoothSpec(bandwidth=1.0),
                       pts=xy, hband=NeighborhoodSpec.constant(1e-9))
    fit = local_linear(table, z, 1.0)[0]
    nb = build_neighborhoods(xy, 0.0, 1e-9)
    assert singleton.se[0] == pytest.approx(np.sqrt(hac_local_variance(fit, nb.adjacency)[0]))
