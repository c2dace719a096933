import math

import numpy as np
import pytest

from spdelab.covariance import KernelSpec
from spdelab.density import (DegenerateSampleError, Ensemble, InsufficientDataError, check_drift_bound,
                             check_envelope, drift_bound, estimate_density, estimate_holder,
                             exact_envelope_values, holder_probes, increment_variance,
                             increment_variance_grid, run_ensemble)
from spdelab.noise import GridSpec
from spdelab.solver import Model

RIESZ = KernelSpec.riesz(1, 0.5)
BESSEL = KernelSpec.bessel(1, 0.5)
GRID = GridSpec.for_horizon(1, 32, 1.0, 16)
ORIGIN = np.zeros(1)


def gaussian_ensemble(samples_by_t, seed=0):
    probes = [(t, ORIGIN) for t in samples_by_t]
    data = np.stack(list(samples_by_t.values()))
    return Ensemble(None, None, None, probes, data, seed, data.shape[1])


def normal_samples(n, m=1, scale=1.0, seed=0):
    return np.random.default_rng(seed).normal(scale=scale, size=(n, m))


def test_empty_ensemble():
    ens = run_ensemble(Model.additive(1), RIESZ, GRID, [(1.0, ORIGIN)], 0, 1)
    assert ens.samples.shape == (1, 0, 1)
    with pytest.raises(InsufficientDataError):
        estimate_density(ens, 0)


def test_ensemble_independent_of_workers():
    model = Model.scalar(1, {"fn": "sin", "offset": 2.0}, {"fn": "cos"})
    runs = [run_ensemble(model, RIESZ, GRID, [(0.5, ORIGIN), (1.0, [1.0])], 1100, 9, workers=w).samples
            for w in (1, 4, 8)]
    np.testing.assert_array_equal(runs[0], runs[1])
    np.testing.assert_array_equal(runs[0], runs[2])


def test_probe_lookup():
    ens = gaussian_ensemble({0.5: normal_samples(10), 1.0: normal_samples(10)})
    assert ens.probe_index((1.0, [0.0])) == 1 and ens.probe_index(0) == 0
    with pytest.raises(KeyError):
        ens.probe_index((0.7, ORIGIN))


def test_kde_of_standard_normal():
    ens = gaussian_ensemble({1.0: normal_samples(100_000)})
    est = estimate_density(ens, 0, bootstrap=20)
    mid = len(est.eval_points[0]) // 2
    assert est.eval_points[0][mid] == 0.0
    assert est.values[mid] == pytest.approx(1 / math.sqrt(2 * math.pi), abs=0.01)
    assert est.mass == pytest.approx(0.99, abs=0.01)
    x = est.eval_points[0]
    inner = np.abs(x) < 2
    np.testing.assert_allclose(est.values[inner], np.exp(-x[inner] ** 2 / 2) / math.sqrt(2 * math.pi),
                               atol=0.015)


def test_kde_symmetric_for_symmetric_sample():
    y = normal_samples(20_000)
    ens = gaussian_ensemble({1.0: np.concatenate([y, -y])})
    est = estimate_density(ens, 0, bootstrap=0)
    np.testing.assert_allclose(est.values, est.values[::-1], rtol=1e-9, atol=1e-12)


def test_kde_two_dimensional():
    ens = gaussian_ensemble({1.0: normal_samples(50_000, m=2)})
    est = estimate_density(ens, 0, bootstrap=0)
    c = len(est.eval_points[0]) // 2
    assert est.values[c, c] == pytest.approx(1 / (2 * math.pi), rel=0.05)


def test_kde_bootstrap_is_deterministic():
    ens = gaussian_ensemble({1.0: normal_samples(10_000)})
    a = estimate_density(ens, 0, bootstrap=10)
    b = estimate_density(ens, 0, bootstrap=10, workers=3)
    np.testing.assert_array_equal(a.mc_rel_err, b.mc_rel_err)


def test_degenerate_and_small_samples():
    with pytest.raises(DegenerateSampleError):
        estimate_density(gaussian_ensemble({1.0: np.zeros((20_000, 1))}), 0)
    with pytest.raises(InsufficientDataError):
        estimate_density(gaussian_ensemble({1.0: normal_samples(500)}), 0)


def test_envelope_of_exact_gaussians():
    phis = [0.5, 0.8, 1.1]
    ens = gaussian_ensemble({t: normal_samples(100_000, scale=math.sqrt(p), seed=k)
                             for k, (t, p) in enumerate(zip((0.25, 0.5, 1.0), phis))})
    ests = [estimate_density(ens, k, bootstrap=50) for k in range(3)]
    rep = check_envelope(ests, phis, 1.0)
    assert rep.passed and rep.C1 <= rep.C3
    c1, c2, c3, c4, c5 = exact_envelope_values(ests[0], phis[0])
    assert (c2, c4, c5) == (2.0, 0.0, 2.0)
    assert 1.5 <= rep.C2 <= 3.0 and 1.5 <= rep.C5 <= 3.0
    assert rep.C1 == pytest.approx(c1, rel=0.2) and rep.C3 == pytest.approx(c3, rel=0.2)
    with pytest.raises(InsufficientDataError):
        check_envelope(ests[:2], phis[:2], 1.0)


def test_holder_zero_model_and_lag_count():
    probes, pairs = holder_probes(GRID, "Space", [GRID.h * k for k in (1, 2, 3, 4)])
    ens = run_ensemble(Model.additive(1, 0.0), RIESZ, GRID, probes, 10, 0)
    rep = estimate_holder(ens, pairs, "Space")
    assert not rep.passed and math.isnan(rep.fitted_exponent)
    probes, pairs = holder_probes(GRID, "Space", [GRID.h, 2 * GRID.h])
    ens = run_ensemble(Model.additive(1), RIESZ, GRID, probes, 10, 0)
    with pytest.raises(InsufficientDataError):
        estimate_holder(ens, pairs, "Space")
    with pytest.raises(ValueError):
        estimate_holder(ens, pairs, "Diagonal")


def test_holder_space_additive_matches_lattice_oracle():
    grid = GridSpec.for_horizon(1, 256, 1.0, 16)
    lags = [grid.h * k for k in (1, 2, 4, 8)]
    probes, pairs = holder_probes(grid, "Space", lags)
    ens = run_ensemble(Model.additive(1), RIESZ, grid, probes, 2000, 3, workers=1)
    oracle = np.array([increment_variance_grid(RIESZ, grid, "Space", 1.0, lag) for lag in lags])
    ref = np.polyfit(np.log(lags), np.log(oracle), 1)[0] / 2
    rep = estimate_holder(ens, pairs, "Space", reference=ref, tol=0.05)
    assert rep.passed, rep


def test_drift_bound():
    zero = Model.scalar(1, 1.0, 0.0)
    assert check_drift_bound(zero, RIESZ, GRID, 20) == 0.0
    const = Model.scalar(1, 1.0, -0.4)
    assert check_drift_bound(const, RIESZ, GRID, 20) == pytest.approx(0.4, rel=1e-10)
    wavy = Model.scalar(1, {"fn": "sin", "offset": 2.0}, {"fn": "cos", "scale": 0.5})
    assert check_drift_bound(wavy, RIESZ, GRID, 50) <= drift_bound(wavy, GRID.T)
    assert drift_bound(wavy, 2.0) == pytest.approx(1.0, rel=1e-5)


@pytest.mark.parametrize("axis,lag", [("Time", 0.05), ("Space", 0.2)])
def test_lattice_increment_oracle_approaches_continuum(axis, lag):
    grid = GridSpec.for_horizon(1, 1024, 1.0, 64)
    g = increment_variance_grid(BESSEL, grid, axis, 1.0, lag)
    c = increment_variance(BESSEL, axis, 1.0, lag)
    assert g == pytest.approx(c, rel=0.01)
