"""End-to-end acceptance criteria.

Each test records its outcome through the ``criterion`` fixture; the terminal
summary prints one PASS/FAIL line per criterion.  Run on its own with

    python3 -m pytest tests/test_acceptance.py -v
"""

import math
import time

import numpy as np
import pytest

from spdelab.cli import run
from spdelab.covariance import KernelSpec
from spdelab.density import (check_envelope, estimate_density, estimate_holder, holder_probes,
                             increment_variance, run_ensemble)
from spdelab.malliavin import (check_derivative_scaling, derivative_field, derivative_window_stats,
                               malliavin_matrix)
from spdelab.noise import GridSpec, discrete_inner_product, phi_grid
from spdelab.phi import check_h1, check_h2, compute_phi, phi_physical_white
from spdelab.rng import CounterStream
from spdelab.solver import Model, check_ellipticity, noise_batch, simulate_batch, solve

pytestmark = pytest.mark.acceptance

WHITE = KernelSpec.white(1)
RIESZ = KernelSpec.riesz(1, 0.5)
BESSEL = KernelSpec.bessel(1, 0.5)
FRAC = KernelSpec.fractional((0.75, 0.75))
ORIGIN = np.zeros(1)
SIGMA = {"fn": "sin", "offset": 2.0}
DRIFT = {"fn": "cos", "scale": 0.5}
NONLINEAR = Model.scalar(1, SIGMA, DRIFT)
DEFAULT_GRID = GridSpec.for_horizon(1, 64, 1.0, 64)


def var_se(x):
    x = x - x.mean()
    v = np.mean(x**2)
    return v, math.sqrt((np.mean(x**4) - v**2) / len(x))


def test_phi_exactness(criterion):
    t0 = time.perf_counter()
    ts = np.geomspace(1e-3, 10.0, 10)
    exact = np.sqrt(ts / math.pi)
    closed = np.array([compute_phi(WHITE, t) for t in ts])
    fourier = np.array([compute_phi(WHITE, t, "Quadrature") for t in ts])
    physical = np.array([phi_physical_white(t) for t in ts])
    elapsed = time.perf_counter() - t0
    e1 = float(np.max(np.abs(closed / exact - 1)))
    e2 = float(np.max(np.abs(fourier / physical - 1)))
    ok = e1 <= 1e-5 and e2 <= 1e-6 and elapsed < 1.0
    criterion(1, ok, f"closed form err {e1:.1e}, Fourier vs physical {e2:.1e}, {elapsed:.2f}s")
    assert ok


@pytest.mark.parametrize("kernel,beta", [(RIESZ, 0.75), (BESSEL, 0.75), (FRAC, 0.5)],
                         ids=["riesz", "bessel", "fractional"])
def test_h1_exponents(criterion, kernel, beta):
    t0 = time.perf_counter()
    rep = check_h1(kernel)
    elapsed = time.perf_counter() - t0
    ok = abs(rep.fitted_exponent - beta) <= 0.02 and rep.r_squared >= 0.999 and elapsed < 10
    criterion(2, ok, f"{kernel.family.value} beta {rep.fitted_exponent:.4f} vs {beta} "
                     f"(R2 {rep.r_squared:.5f}, {elapsed:.1f}s)")
    assert ok


@pytest.mark.parametrize("kernel,gammas", [(RIESZ, (0.25, 0.5)), (FRAC, (0.2, 0.4))],
                         ids=["riesz", "fractional"])
def test_h2_exponents(criterion, kernel, gammas):
    t0 = time.perf_counter()
    g1, g2 = gammas
    beta = 0.75 if kernel is RIESZ else 0.5
    b1, b2 = check_h2(kernel, g1, g2)
    elapsed = time.perf_counter() - t0
    ok = (abs(b1.fitted_exponent - (beta + g2 / 2)) <= 0.02 and abs(b2.fitted_exponent - (beta + g1)) <= 0.02
          and b1.passed and b2.passed and elapsed < 30)
    criterion(3, ok, f"{kernel.family.value} beta1 {b1.fitted_exponent:.4f} vs {beta + g2 / 2}, "
                     f"beta2 {b2.fitted_exponent:.4f} vs {beta + g1} ({elapsed:.1f}s)")
    assert ok


def test_noise_isometry(criterion):
    t0 = time.perf_counter()
    grid = GridSpec.for_horizon(1, 64, 1.0, 16)
    x = grid.coords()
    tt = np.arange(grid.n_steps) * grid.dt
    tests = {
        "bump": (np.exp(-x[None, :] ** 2 / 2) * (1 + tt[:, None]))[:, None, :],
        "indicator": np.broadcast_to(((x > -1) & (x < 2)).astype(float), (grid.n_steps, grid.N))[:, None, :],
    }
    n = 10_000
    zs = []
    for kernel in (WHITE, RIESZ, BESSEL):
        noise = [noise_batch(kernel, grid, 1, 21, np.arange(n), s).reshape(n, -1) for s in range(grid.n_steps)]
        for name, g in tests.items():
            total = sum(noise[s] @ g[s].ravel() for s in range(grid.n_steps)) * grid.cell_volume
            target = sum(grid.dt * discrete_inner_product(g[s], g[s], kernel, grid) for s in range(grid.n_steps))
            v, se = var_se(total)
            zs.append(((v - target) / se, f"{kernel.family.value}/{name}"))
    elapsed = time.perf_counter() - t0
    worst = max(zs, key=lambda z: abs(z[0]))
    ok = abs(worst[0]) <= 4 and elapsed < 60
    criterion(4, ok, f"6 cases, worst z = {worst[0]:+.2f} ({worst[1]}), {elapsed:.1f}s")
    assert ok


def test_additive_end_to_end(criterion):
    t0 = time.perf_counter()
    grid = GridSpec.for_horizon(1, 128, 1.0, 128)
    ts = [0.25, 0.5, 1.0]
    ens = run_ensemble(Model.additive(1), WHITE, grid, [(t, ORIGIN) for t in ts], 100_000, 2024)
    phi_T = compute_phi(WHITE, 1.0)
    var = float(ens.samples[2, :, 0].var(ddof=1))
    rel = var / phi_T - 1
    criterion(5, abs(rel) <= 0.03, f"variance/Phi(T) - 1 = {rel:+.4f} (lattice bias "
                                   f"{phi_grid(WHITE, grid, 1.0) / phi_T - 1:+.4f})")
    ests = [estimate_density(ens, k) for k in range(3)]
    est = ests[2]
    y = est.eval_points[0]
    exact = np.exp(-y**2 / (2 * phi_T)) / math.sqrt(2 * math.pi * phi_T)
    adm = (est.mc_rel_err < 0.1) & (est.values > 0)
    z = np.abs(est.values - exact)[adm] / (est.mc_rel_err * est.values)[adm]
    criterion(5, z.max() <= 3, f"KDE max |p_hat - p| / bootstrap err = {z.max():.2f} over {adm.sum()} points")
    env = check_envelope(ests, [compute_phi(WHITE, t) for t in ts], grid.T)
    elapsed = time.perf_counter() - t0
    ok_env = env.passed and 1.5 <= env.C2 <= 3 and 1.5 <= env.C5 <= 3
    criterion(5, ok_env, f"C2 = {env.C2:.3f}, C5 = {env.C5:.3f}")
    criterion(5, elapsed < 300, f"{elapsed:.0f}s")
    assert abs(rel) <= 0.03 and z.max() <= 3 and ok_env and elapsed < 300


def test_malliavin_adjoint(criterion):
    t0 = time.perf_counter()
    grid = DEFAULT_GRID
    target = (1.0, ORIGIN)
    sol = solve(NONLINEAR, RIESZ, grid, CounterStream(5, 0), store=True)
    D = derivative_field(sol, NONLINEAR, RIESZ, target)
    W = np.stack([f.data for f in sol.noise])
    i0 = grid.index_of(ORIGIN)[0]
    x = grid.coords()
    rng = np.random.default_rng(77)
    eps = 1e-6
    errs = []
    while len(errs) < 20:
        n = int(rng.integers(0, grid.n_steps))
        z = int(rng.integers(0, grid.N))
        if abs(x[z]) > 2 * math.sqrt(grid.T - n * grid.dt) + grid.h:
            continue  # outside the heat-kernel support the derivative is numerically zero
        up, dn = W.copy(), W.copy()
        up[n, 0, z] += eps
        dn[n, 0, z] -= eps
        fp = simulate_batch(NONLINEAR, RIESZ, grid, 0, [0], noise=up[None]).terminal[0, 0, i0]
        fm = simulate_batch(NONLINEAR, RIESZ, grid, 0, [0], noise=dn[None]).terminal[0, 0, i0]
        fd = (fp - fm) / (2 * eps) / grid.h
        errs.append(abs(D.data[n, 0, 0, z] - fd) / abs(fd))
    worst = max(errs)
    criterion(6, worst <= 1e-4, f"20 source points, max relative error {worst:.1e}")
    const = Model.scalar(1, 1.0, 0.0)
    Dc = derivative_field(solve(const, RIESZ, grid, CounterStream(5, 1), store=True), const, RIESZ, target)
    M = malliavin_matrix(Dc, RIESZ, grid).entries[0, 0]
    pg = phi_grid(RIESZ, grid, 1.0)
    pc = compute_phi(RIESZ, 1.0)
    elapsed = time.perf_counter() - t0
    ok_m = abs(M / pg - 1) <= 0.02 and abs(pg / pc - 1) <= 0.02
    criterion(6, ok_m and elapsed < 120, f"M / Phi_grid - 1 = {M / pg - 1:+.1e}, "
                                         f"Phi_grid / Phi - 1 = {pg / pc - 1:+.4f}, {elapsed:.1f}s")
    assert worst <= 1e-4 and ok_m and elapsed < 120


def test_derivative_scaling(criterion):
    t0 = time.perf_counter()
    grid = DEFAULT_GRID
    deltas = [grid.T / 16, grid.T / 8, grid.T / 4, grid.T / 2]
    rep = check_derivative_scaling(NONLINEAR, RIESZ, grid, deltas, 1000, seed=3)
    stats, phis = derivative_window_stats(NONLINEAR, RIESZ, grid, deltas, 1000, seed=3)
    ratios = stats / phis
    spread = ratios.max() / ratios.min()
    elapsed = time.perf_counter() - t0
    ok = rep.passed and spread <= 3 and elapsed < 300
    criterion(7, ok, f"ratios {np.array2string(ratios, precision=3)}, max/min {spread:.3f}, {elapsed:.0f}s")
    assert ok


def test_holder_exponents(criterion):
    t0 = time.perf_counter()
    grid = GridSpec.for_horizon(1, 512, 1.0, 512)
    lags = [grid.dt * k for k in (4, 8, 16, 32, 64, 128)]
    probes, pairs = holder_probes(grid, "Time", lags)
    ens = run_ensemble(Model.additive(1), WHITE, grid, probes, 2000, 31)
    rt = estimate_holder(ens, pairs, "Time", reference=0.25, tol=0.03)
    oracle = [increment_variance(WHITE, "Time", 1.0, lag) for lag in lags]
    ot = np.polyfit(np.log(lags), np.log(oracle), 1)[0] / 2
    ok_t = rt.passed and abs(rt.fitted_exponent - ot) <= 0.03 and 0 < rt.fitted_exponent
    criterion(8, ok_t, f"time {rt.fitted_exponent:.4f} (oracle {ot:.4f}, target 0.25 +- 0.03)")

    grid = GridSpec.for_horizon(1, 2048, 1.0, 16)
    lags = [grid.h * k for k in (1, 2, 4, 8, 16)]
    probes, pairs = holder_probes(grid, "Space", lags)
    ens = run_ensemble(Model.additive(1), RIESZ, grid, probes, 4000, 32)
    rs = estimate_holder(ens, pairs, "Space", reference=0.75, tol=0.05)
    oracle = [increment_variance(RIESZ, "Space", 1.0, lag) for lag in lags]
    os_ = np.polyfit(np.log(lags), np.log(oracle), 1)[0] / 2
    ok_s = rs.passed and abs(rs.fitted_exponent - os_) <= 0.05 and 0 < rs.fitted_exponent
    criterion(8, ok_s, f"space {rs.fitted_exponent:.4f} (oracle {os_:.4f}, target 0.75 +- 0.05)")
    elapsed = time.perf_counter() - t0
    criterion(8, elapsed < 300, f"{elapsed:.0f}s")
    assert ok_t and ok_s and elapsed < 300


def test_gaussian_envelope(criterion):
    t0 = time.perf_counter()
    grid = DEFAULT_GRID
    ts = [grid.T / 4, grid.T / 2, grid.T]
    phis = [compute_phi(RIESZ, t) for t in ts]
    model = Model.scalar(1, SIGMA, DRIFT)
    ens = run_ensemble(model, RIESZ, grid, [(t, ORIGIN) for t in ts], 100_000, 99)
    ests = [estimate_density(ens, k) for k in range(3)]
    env = check_envelope(ests, phis, grid.T, C4=model.b.sup_norm(), c1_min=1e-3, c3_max=1e3)
    ok1 = env.passed and env.C4 == 0.5
    criterion(9, ok1, f"scalar: C1 {env.C1:.3g}, C2 {env.C2:.3g}, C3 {env.C3:.3g}, C4 {env.C4}, "
                      f"C5 {env.C5:.3g} over {env.n_points} points")

    system = Model.from_specs(
        1, 2, 2,
        {"funcs": ["sin", "sin", "cos"], "A": [[1, 0, 0], [0, 0, 0.2], [0, 0, 0.2], [0, 1, 0]],
         "W": [[1, 0], [0, 1], [1, -1]], "a0": [2, 0, 0, 2]},
        {"fn": "cos", "scale": 0.5}, h3=True)
    ell = check_ellipticity(system, 100_000)
    ens2 = run_ensemble(system, RIESZ, grid, [(t, ORIGIN) for t in ts], 10_000, 100)
    ests2 = [estimate_density(ens2, k) for k in range(3)]
    env2 = check_envelope(ests2, phis, grid.T, C4=system.b.sup_norm(), c1_min=1e-4, c3_max=1e3)
    elapsed = time.perf_counter() - t0
    ok2 = ell.passed and env2.passed
    criterion(9, ok2, f"m = 2 system (C1_hat {ell.C1_hat:.3f}): C1 {env2.C1:.3g}, C3 {env2.C3:.3g}, "
                      f"C2 {env2.C2:.3g}, C5 {env2.C5:.3g}")
    criterion(9, elapsed < 900, f"{elapsed:.0f}s")
    assert ok1 and ok2 and elapsed < 900


def test_ellipticity(criterion):
    t0 = time.perf_counter()
    ident = check_ellipticity(Model.scalar(1, 1.0, 0.0), 100_000)
    eye2 = check_ellipticity(Model.from_specs(1, 2, 2, [1.0, 0.0, 0.0, 1.0], 0.0, h3=True), 10_000)
    wavy = check_ellipticity(Model.scalar(1, SIGMA, 0.0), 100_000)
    bad = check_ellipticity(Model.scalar(1, {"fn": "sin"}, 0.0), 100_000)
    elapsed = time.perf_counter() - t0
    ok = (ident.C1_hat == 1.0 and ident.C2_hat == 1.0 and abs(eye2.C1_hat - 1) < 1e-12
          and abs(eye2.C2_hat - 1) < 1e-12 and 0.99 <= wavy.C1_hat <= 1.01 and 0.99 * 9 <= wavy.C2_hat <= 1.01 * 9
          and not bad.passed and elapsed < 10)
    criterion(10, ok, f"identity ({ident.C1_hat}, {ident.C2_hat}), 2+sin ({wavy.C1_hat:.4f}, "
                      f"{wavy.C2_hat:.4f}), sin passed={bad.passed}, {elapsed:.1f}s")
    assert ok


def test_determinism(criterion, tmp_path):
    import yaml

    t0 = time.perf_counter()
    cfg = {
        "seed": 12345,
        "kernel": {"family": "riesz", "d": 1, "gamma": 0.5},
        "grid": {"N": 64, "n_steps": 32, "T": 1.0},
        "model": {"sigma": SIGMA, "b": DRIFT, "h3": True},
        "kernel_checks": {"eta": [0.5]},
        "phi": {"t_grid": [0.1, 0.5, 1.0], "h2": {"gamma1": 0.25, "gamma2": 0.5}},
        "simulate": {"paths": 3000, "probes": [{"t": 0.5}, {"t": 1.0, "x": 1.0}], "dump_terminal": True},
        "verify": {"t_grid": [0.25, 0.5, 1.0], "paths": 10_000, "bootstrap": 50,
                   "derivative": {"paths": 200}, "drift": {"paths": 500}},
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    mismatches = []
    for command in ("kernel", "phi", "simulate", "verify"):
        payloads = []
        for w in (1, 4, 8):
            out = tmp_path / f"{command}-{w}"
            run(["--config", str(path), "--command", command, "--workers", str(w), "--out", str(out)])
            payloads.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "metadata.json"})
        if not (payloads[0] == payloads[1] == payloads[2]):
            mismatches.append(command)
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 300
    criterion(11, ok, f"kernel/phi/simulate/verify x workers 1, 4, 8: "
                      f"{'identical' if not mismatches else 'differ in ' + ', '.join(mismatches)}, {elapsed:.0f}s")
    assert ok
