import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kcn.errors import EmptyVariogram, InsufficientData, InvalidInput
from kcn.variogram import (KINDS, EmpiricalVariogram, VariogramModel, empirical_semivariogram,
                           fit_variogram, model_semivariance, semivariance_matrix, weighted_rss)


def pair_loop_variogram(pts, vals, num_bins, max_lag):
    """O(N^2) double loop over pairs, one bin at a time."""
    width = max_lag / num_bins
    sums = [0.0] * num_bins
    dsum = [0.0] * num_bins
    counts = [0] * num_bins
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            d = math.dist(pts[i], pts[j])
            if d > max_lag:
                continue
            b = min(int(d / width), num_bins - 1)
            if b * width > d:
                b -= 1
            sums[b] += 0.5 * (vals[i] - vals[j]) ** 2
            dsum[b] += d
            counts[b] += 1
    keep = [b for b in range(num_bins) if counts[b]]
    return (np.array([dsum[b] / counts[b] for b in keep]),
            np.array([sums[b] / counts[b] for b in keep]),
            np.array([counts[b] for b in keep]))


def test_matches_pair_loop(rng):
    pts = rng.uniform(0, 10, (50, 2))
    vals = rng.normal(size=50)
    emp = empirical_semivariogram(pts, vals, num_bins=12, max_lag=6.0)
    centers, gammas, counts = pair_loop_variogram(pts.tolist(), vals.tolist(), 12, 6.0)
    np.testing.assert_array_equal(emp.pair_counts, counts)
    np.testing.assert_allclose(emp.semivariances, gammas, rtol=1e-12, atol=0)
    np.testing.assert_allclose(emp.bin_centers, centers, rtol=1e-12, atol=0)


def test_default_max_lag_is_half_diagonal(rng):
    pts = rng.uniform(0, 1, (40, 2))
    vals = rng.normal(size=40)
    lo, hi = pts.min(0), pts.max(0)
    max_lag = 0.5 * np.hypot(*(hi - lo))
    a = empirical_semivariogram(pts, vals)
    b = empirical_semivariogram(pts, vals, 15, max_lag)
    np.testing.assert_array_equal(a.semivariances, b.semivariances)


def test_constant_field_is_zero(rng):
    emp = empirical_semivariogram(rng.uniform(size=(30, 2)), np.full(30, 3.0))
    assert np.all(emp.semivariances == 0.0)


def test_single_pair():
    emp = empirical_semivariogram([[0, 0], [1, 0]], [0, 2], num_bins=1, max_lag=1.5)
    assert emp.semivariances.tolist() == [2.0]
    assert emp.pair_counts.tolist() == [1]


def test_bins_increasing_and_nonempty(rng):
    emp = empirical_semivariogram(rng.uniform(size=(80, 2)), rng.normal(size=80), 20)
    assert np.all(np.diff(emp.bin_centers) > 0)
    assert np.all(emp.pair_counts > 0)
    assert np.all(emp.semivariances >= 0)


def test_permutation_invariant(rng):
    pts = rng.uniform(size=(60, 2))
    vals = rng.normal(size=60)
    perm = rng.permutation(60)
    a = empirical_semivariogram(pts, vals, 10, 0.5)
    b = empirical_semivariogram(pts[perm], vals[perm], 10, 0.5)
    np.testing.assert_array_equal(a.pair_counts, b.pair_counts)
    np.testing.assert_allclose(a.semivariances, b.semivariances, rtol=1e-12)


def test_estimation_errors():
    with pytest.raises(InvalidInput):
        empirical_semivariogram([[0, 0]], [1.0])
    with pytest.raises(EmptyVariogram):
        empirical_semivariogram([[0, 0], [5, 5]], [1.0, 2.0], max_lag=1.0)
    with pytest.raises(EmptyVariogram):
        empirical_semivariogram([[1, 1], [1, 1]], [1.0, 2.0])
    with pytest.raises(InvalidInput):
        empirical_semivariogram([[0, 0], [1, 1]], [1.0, 2.0], max_lag=-1.0)


def test_model_values():
    assert model_semivariance(VariogramModel("exponential", 0.1, 1.0, 2.0), 0.0) == 0.1
    sph = VariogramModel("spherical", 0.0, 1.0, 1.0)
    assert model_semivariance(sph, 1.0) == 1.0
    assert model_semivariance(sph, 3.7) == 1.0
    assert model_semivariance(sph, 0.5) == pytest.approx(1.5 * 0.5 - 0.5 * 0.125)
    g = VariogramModel("gaussian", 0.0, 2.0, 1.0)
    assert model_semivariance(g, 1.0) == pytest.approx(2 * (1 - math.exp(-1)), abs=1e-12)
    assert model_semivariance(g, 1.0) == pytest.approx(1.26424, abs=1e-5)
    e = VariogramModel("exponential", 0.2, 1.0, 3.0)
    assert e(1.5) == pytest.approx(0.2 + 1.0 - math.exp(-0.5))


def test_negative_lag_rejected(expo):
    with pytest.raises(InvalidInput):
        model_semivariance(expo, -0.1)


@pytest.mark.parametrize("kw", [dict(kind="matern"), dict(nugget=-1.0), dict(psill=-0.1),
                                dict(range=0.0), dict(range=float("inf"))])
def test_invalid_models(kw):
    base = dict(kind="exponential", nugget=0.1, psill=1.0, range=1.0)
    base.update(kw)
    with pytest.raises(InvalidInput):
        VariogramModel(**base)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(KINDS), st.floats(0, 5), st.floats(0, 5), st.floats(0.01, 10))
def test_monotone_and_sill_limit(kind, nugget, psill, rng_):
    m = VariogramModel(kind, nugget, psill, rng_)
    h = np.linspace(0, 10 * rng_, 400)
    g = m(h)
    assert np.all(np.diff(g) >= -1e-12)
    assert m(1e6 * rng_) == pytest.approx(m.sill, rel=1e-9, abs=1e-12)


def test_semivariance_matrix_convention(rng, expo):
    pts = rng.uniform(size=(8, 2))
    pts[3] = pts[5]
    G = semivariance_matrix(expo, pts)
    assert np.all(np.diag(G) == 0.0)
    np.testing.assert_array_equal(G, G.T)
    assert G[3, 5] == expo.nugget
    cross = semivariance_matrix(expo, pts, pts[:2])
    assert cross.shape == (8, 2)
    assert cross[0, 0] == expo.nugget


def test_json_round_trip(expo):
    text = expo.to_json()
    assert json.loads(text) == {"kind": "exponential", "nugget": 0.1, "psill": 1.0, "range": 0.3}
    assert VariogramModel.from_json(text) == expo
    with pytest.raises(InvalidInput):
        VariogramModel.from_dict({"kind": "exponential"})


def synthetic_emp(model, lags, counts=None):
    lags = np.asarray(lags, dtype=float)
    counts = np.full(len(lags), 100) if counts is None else np.asarray(counts)
    return EmpiricalVariogram(lags, model(lags), counts)


def test_fit_recovers_generating_exponential():
    truth = VariogramModel("exponential", 0.2, 1.0, 3.0)
    emp = synthetic_emp(truth, np.linspace(0.5, 10, 10))
    fit = fit_variogram(emp, ["exponential"])
    assert fit.kind == "exponential"
    for a, b in [(fit.nugget, 0.2), (fit.psill, 1.0), (fit.range, 3.0)]:
        assert abs(a - b) / b < 0.05


def test_gaussian_selected_among_all():
    truth = VariogramModel("gaussian", 0.1, 2.0, 1.5)
    emp = synthetic_emp(truth, np.linspace(0.2, 4, 15))
    best, fits = fit_variogram(emp, KINDS, return_all=True)
    assert best.kind == "gaussian"
    rss = {k: weighted_rss(m, emp) for k, (m, _) in fits.items()}
    assert rss["gaussian"] == min(rss.values())
    for k, (m, r) in fits.items():
        assert r == pytest.approx(rss[k])


def test_single_kind_returned_regardless():
    emp = synthetic_emp(VariogramModel("gaussian", 0.0, 1.0, 1.0), np.linspace(0.1, 3, 10))
    assert fit_variogram(emp, ["spherical"]).kind == "spherical"


def test_nugget_floor_applied():
    emp = synthetic_emp(VariogramModel("exponential", 0.0, 1.0, 1.0), np.linspace(0.1, 5, 12))
    fit = fit_variogram(emp, ["exponential"])
    assert fit.nugget >= 1e-6 * fit.sill * (1 - 1e-12)
    assert fit.nugget > 0


def test_best_rss_is_minimum_on_noisy_data(rng):
    pts = rng.uniform(size=(150, 2))
    vals = np.sin(5 * pts[:, 0]) + 0.3 * rng.normal(size=150)
    emp = empirical_semivariogram(pts, vals)
    best, fits = fit_variogram(emp, return_all=True)
    assert weighted_rss(best, emp) <= min(r for _, r in fits.values()) + 1e-15


def test_fit_errors():
    emp = synthetic_emp(VariogramModel("exponential", 0.1, 1, 1), [0.5, 1.0])
    with pytest.raises(InsufficientData):
        fit_variogram(emp)
    emp3 = synthetic_emp(VariogramModel("exponential", 0.1, 1, 1), [0.5, 1.0, 2.0])
    with pytest.raises(InvalidInput):
        fit_variogram(emp3, [])
    with pytest.raises(InvalidInput):
        fit_variogram(emp3, ["stein"])


def test_fit_failed_carries_diagnostics(monkeypatch):
    import types

    from kcn import variogram
    from kcn.errors import FitFailed

    monkeypatch.setattr(variogram, "least_squares",
                        lambda *a, **k: types.SimpleNamespace(x=np.full(3, np.nan), cost=np.nan))
    emp = synthetic_emp(VariogramModel("exponential", 0.1, 1, 1), [0.5, 1.0, 2.0])
    with pytest.raises(FitFailed) as info:
        fit_variogram(emp, ["exponential", "gaussian"])
    assert set(info.value.diagnostics) == {"exponential", "gaussian"}
