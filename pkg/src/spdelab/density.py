"""Monte Carlo ensembles, kernel density estimates and the Gaussian envelope test."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate, interpolate, ndimage

from .covariance import KernelSpec, spectral_density
from .noise import GridSpec, mode_masses
from .phi import h1_exponent
from .reports import Hypothesis, ScalingReport, loglog_fit
from .rng import CounterStream
from .solver import Model, probe_samples

FINE_BINS = {1: 2048, 2: 256, 3: 64}
EVAL_POINTS = {1: 81, 2: 41, 3: 21}


class InsufficientDataError(ValueError):
    pass


class DegenerateSampleError(ValueError):
    pass


@dataclass
class Ensemble:
    model: Model
    kernel: KernelSpec
    grid: GridSpec
    probes: list  # (t, x) pairs
    samples: np.ndarray  # (n_probes, path_count, m)
    master_seed: int
    path_count: int
    drift: np.ndarray = None

    def probe_index(self, probe):
        if isinstance(probe, (int, np.integer)):
            return int(probe)
        t, x = probe
        for k, (tk, xk) in enumerate(self.probes):
            if abs(tk - t) < 1e-12 and np.allclose(np.atleast_1d(xk), np.atleast_1d(x)):
                return k
        raise KeyError(f"probe {probe} is not part of the ensemble")


def run_ensemble(model, kernel, grid, probes, path_count, master_seed, workers=None, track_drift=False):
    """Simulate ``path_count`` paths; path k uses the counter stream (master_seed, k)."""
    probes = [(float(t), np.atleast_1d(np.asarray(x, dtype=float))) for t, x in probes]
    out = probe_samples(model, kernel, grid, master_seed, path_count, probes, workers,
                        track_drift=track_drift)
    samples, drift = out if track_drift else (out, None)
    return Ensemble(model, kernel, grid, probes, samples, int(master_seed), int(path_count), drift)


@dataclass
class DensityEstimate:
    probe: tuple
    eval_points: tuple  # one coordinate array per axis
    values: np.ndarray  # shape (n,) * m
    bandwidth: np.ndarray
    mc_rel_err: np.ndarray
    sample_variance: float  # mean over axes
    n_samples: int

    @property
    def m(self):
        return len(self.eval_points)

    @property
    def cell_volume(self):
        return math.prod(float(a[1] - a[0]) for a in self.eval_points)

    @property
    def mass(self):
        return float(self.values.sum() * self.cell_volume)

    def points(self):
        """Evaluation points as an array (n_points, m)."""
        mesh = np.meshgrid(*self.eval_points, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)


def _bin_linear(y, edges_lo, delta, n):
    """Linear binning of samples (n_s, m) onto a regular grid with n nodes per axis."""
    m = y.shape[1]
    pos = (y - edges_lo) / delta
    base = np.clip(np.floor(pos).astype(np.int64), 0, n - 2)
    frac = np.clip(pos - base, 0.0, 1.0)
    counts = np.zeros((n,) * m)
    for corner in range(2**m):
        idx = []
        w = np.ones(y.shape[0])
        for a in range(m):
            bit = (corner >> a) & 1
            idx.append(base[:, a] + bit)
            w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
        np.add.at(counts, tuple(idx), w)
    return counts


def _smooth(counts, h_bins):
    out = counts
    for a, s in enumerate(h_bins):
        out = ndimage.gaussian_filter1d(out, s, axis=a, mode="constant", truncate=6.0)
    return out


class _BinnedKDE:
    def __init__(self, y, bandwidth, n_fine):
        self.m = y.shape[1]
        self.n = y.shape[0]
        pad = 6.0 * bandwidth
        self.lo = y.min(axis=0) - pad
        hi = y.max(axis=0) + pad
        self.delta = (hi - self.lo) / (n_fine - 1)
        self.n_fine = n_fine
        self.h_bins = bandwidth / self.delta
        self.axes = [self.lo[a] + self.delta[a] * np.arange(n_fine) for a in range(self.m)]

    def density(self, y, eval_mesh):
        counts = _bin_linear(y, self.lo, self.delta, self.n_fine)
        dens = _smooth(counts, self.h_bins) / (y.shape[0] * math.prod(self.delta))
        f = interpolate.RegularGridInterpolator(self.axes, dens, bounds_error=False, fill_value=0.0)
        return f(eval_mesh)


def _window_radius(y):
    return float(np.quantile(np.max(np.abs(y), axis=1), 0.995))


def estimate_density(ensemble, probe, eval_window=None, n_eval=None, bootstrap=200, seed=None,
                     workers=1, min_samples=10_000):
    """Product-Gaussian KDE of the probe's m-vector samples on a lattice over [-R, R]^m.

    R defaults to the 99.5% quantile of max_k |y_k|, so at least 99% of the
    samples lie in the window.  Relative errors come from ``bootstrap``
    resamples, resample b drawing from its own counter stream.
    """
    k = ensemble.probe_index(probe)
    y = np.asarray(ensemble.samples[k], dtype=float)
    n, m = y.shape
    if n < min_samples:
        raise InsufficientDataError(f"density estimation needs at least {min_samples} samples, got {n}")
    sd = y.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise DegenerateSampleError("a sample axis has zero spread; the distribution is concentrated")
    bw = 1.06 * sd * n ** (-1.0 / (m + 4))
    R = _window_radius(y) if eval_window is None else float(eval_window)
    frac_in = float(np.mean(np.all(np.abs(y) <= R, axis=1)))
    if frac_in < 0.99:
        raise ValueError(f"window R = {R} holds only {frac_in:.3f} of the samples")
    n_eval = EVAL_POINTS.get(m, 15) if n_eval is None else int(n_eval) | 1
    half = n_eval // 2
    axes = tuple(R * (np.arange(n_eval) - half) / half for _ in range(m))
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    kde = _BinnedKDE(y, bw, FINE_BINS.get(m, 32))
    values = kde.density(y, mesh)
    seed = ensemble.master_seed if seed is None else seed

    def one(b):
        rng = CounterStream(seed, b).numpy_generator(purpose=1000 + k)
        return kde.density(y[rng.integers(0, n, n)], mesh)

    if bootstrap > 0:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                boots = np.stack(list(pool.map(one, range(bootstrap))))
        else:
            boots = np.stack([one(b) for b in range(bootstrap)])
        err = boots.std(axis=0, ddof=1)
    else:
        err = np.full_like(values, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(values > 0, err / values, np.inf)
    shape = (n_eval,) * m
    t, x = ensemble.probes[k]
    return DensityEstimate((t, x), axes, values.reshape(shape), bw, rel.reshape(shape),
                           float(np.mean(sd**2)), n)


def bootstrap_errors(est):
    return est.mc_rel_err * est.values


@dataclass
class EnvelopeReport:
    C1: float
    C2: float
    C3: float
    C4: float
    C5: float
    passed: bool
    worst_point: tuple  # (t, y)
    margin: float
    y_max: float  # largest admissible |y|
    n_points: int

    def to_dict(self):
        return {"C1": self.C1, "C2": self.C2, "C3": self.C3, "C4": self.C4, "C5": self.C5,
                "pass": self.passed, "worst_point": {"t": self.worst_point[0],
                                                     "y": list(np.atleast_1d(self.worst_point[1]))},
                "margin": self.margin, "y_max": self.y_max, "n_points": self.n_points}


def check_envelope(estimates, phis, T, C4=0.0, c1_min=1e-3, c3_max=1e3, max_rel_err=0.1):
    """Look for one constant set with

        C1 Phi^(-m/2) exp(-|y|^2 / (C2 Phi)) <= p(y) <= C3 Phi^(-m/2) exp(-(|y| - C4 T)^2 / (C5 Phi))

    at every admissible (t, y).  C2 and C5 range over 2^j * 2 C_hat, j = -2..4,
    where C_hat is the largest ratio of sample variance to Phi(t).  For each
    candidate the tightest C1 (a minimum) and C3 (a maximum) follow directly.
    Among candidates meeting the gates, C2 is the one whose lower envelope
    follows the estimate most closely (smallest log spread of p / lower), and
    likewise C5 for the upper envelope.
    """
    if len(estimates) != len(phis):
        raise ValueError("one Phi value per estimate is needed")
    if len(estimates) < 3:
        raise InsufficientDataError("the envelope check needs at least 3 values of t")
    m = estimates[0].m
    logp, r2, ph, tt, pts = [], [], [], [], []
    for est, phi in zip(estimates, phis):
        keep = (est.mc_rel_err.ravel() < max_rel_err) & (est.values.ravel() > 0)
        p = est.points()[keep]
        logp.append(np.log(est.values.ravel()[keep]))
        r2.append(np.linalg.norm(p, axis=1))
        ph.append(np.full(keep.sum(), phi))
        tt.append(np.full(keep.sum(), est.probe[0]))
        pts.append(p)
    logp, r, ph, tt = (np.concatenate(a) for a in (logp, r2, ph, tt))
    pts = np.concatenate(pts)
    if logp.size == 0:
        raise InsufficientDataError("no evaluation point passes the relative-error filter")
    c_hat = max(e.sample_variance / p for e, p in zip(estimates, phis))
    cands = [2.0**j * 2.0 * c_hat for j in range(-2, 5)]
    base = logp + 0.5 * m * np.log(ph)
    lower, upper = [], []
    for c in cands:
        a = base + r**2 / (c * ph)
        lower.append((c, float(np.exp(a.min())), float(a.max() - a.min()), int(a.argmin())))
        u = base + (r - C4 * T) ** 2 / (c * ph)
        upper.append((c, float(np.exp(u.max())), float(u.max() - u.min()), int(u.argmax())))
    ok_lo = [x for x in lower if x[1] >= c1_min]
    ok_up = [x for x in upper if x[1] <= c3_max]
    lo = min(ok_lo or lower, key=lambda x: x[2])
    up = min(ok_up or upper, key=lambda x: x[2])
    passed = bool(ok_lo and ok_up)
    margin = min(math.log(lo[1] / c1_min), math.log(c3_max / up[1]))
    w = lo[3] if math.log(lo[1] / c1_min) <= math.log(c3_max / up[1]) else up[3]
    y_w = pts[w] if m > 1 else float(pts[w][0])
    return EnvelopeReport(lo[1], lo[0], up[1], float(C4), up[0], passed, (float(tt[w]), y_w),
                          float(margin), float(r.max()), int(logp.size))


def exact_envelope_values(est, phi):
    """Envelope of the exact N(0, Phi) law: C1 = C3 = (2 pi)^(-m/2), C2 = C5 = 2, C4 = 0."""
    c = (2 * math.pi) ** (-est.m / 2)
    return c, 2.0, c, 0.0, 2.0


# Hoelder increments ---------------------------------------------------------

def holder_probes(grid, axis, lags, t=None, bases=None):
    """Probe list and index pairs for increment moments at the given lags.

    Time: pairs (t, x), (t - lag, x).  Space: pairs (t, x), (t, x + lag e_1).
    ``bases`` are the x positions used for pooling (default: 8 spread points).
    """
    t = grid.T if t is None else float(t)
    if bases is None:
        bases = [np.full(grid.d, (k - 4) * grid.L / 16) for k in range(8)]
    probes, pairs, index = [], [], {}

    def add(tp, xp):
        key = (round(tp / grid.dt), grid.index_of(xp))
        if key not in index:
            index[key] = len(probes)
            probes.append((tp, np.asarray(xp, dtype=float)))
        return index[key]

    for x in bases:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        a = add(t, x)
        for lag in lags:
            if axis == "Time":
                b = add(t - lag, x)
            else:
                y = x.copy()
                y[0] += lag
                b = add(t, y)
            pairs.append((a, b, float(lag)))
    return probes, pairs


def increment_moments(ensemble, pairs, p=2):
    """Pooled E|u(a) - u(b)|^p per lag: (lags, moments, standard errors)."""
    by_lag = {}
    for a, b, lag in pairs:
        diff = np.linalg.norm(ensemble.samples[a] - ensemble.samples[b], axis=1) ** p
        by_lag.setdefault(round(lag, 12), []).append(diff)
    lags = np.array(sorted(by_lag))
    mom, se = [], []
    for lag in lags:
        v = np.concatenate(by_lag[lag])
        mom.append(v.mean())
        # paths are independent; the pooled positions within a path are not
        per_path = np.mean(np.stack(by_lag[lag]), axis=0)
        se.append(per_path.std(ddof=1) / math.sqrt(per_path.size) if per_path.size > 1 else math.nan)
    return lags, np.array(mom), np.array(se)


def holder_reference(kernel, axis):
    """Exponent of the additive increments: beta / 2 in time, beta in space."""
    beta = h1_exponent(kernel)
    return beta / 2.0 if axis == "Time" else beta


def estimate_holder(ensemble, pairs, axis, p=2, reference=None, tol=0.03, r2_min=0.99):
    """Fit E|increment|^p ~ C lag^(gamma p); returns gamma against the reference exponent."""
    if axis not in ("Time", "Space"):
        raise ValueError("axis must be 'Time' or 'Space'")
    hyp = Hypothesis.HOLDER_TIME if axis == "Time" else Hypothesis.HOLDER_SPACE
    lags, mom, _ = increment_moments(ensemble, pairs, p)
    if len(lags) < 4:
        raise InsufficientDataError("Hoelder regression needs at least 4 lags")
    if reference is None:
        reference = holder_reference(ensemble.kernel, axis)
    if np.any(mom <= 0):
        return ScalingReport(hyp, math.nan, reference, math.nan, False, tol)
    slope, _, r2 = loglog_fit(lags, mom)
    g = slope / p
    return ScalingReport(hyp, g, reference, r2, bool(abs(g - reference) <= tol and r2 >= r2_min), tol)


def _w(tau, xi2):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(xi2 > 0, -np.expm1(-tau * xi2) / np.where(xi2 > 0, xi2, 1.0), tau)


def increment_variance_grid(kernel, grid, axis, t, lag):
    """Exact lattice variance of the additive (sigma = 1) increment."""
    m = mode_masses(kernel, grid)
    xi2 = grid.xi_squared()
    if axis == "Time":
        s = t - lag
        return float(np.sum(m * ((-np.expm1(-0.5 * lag * xi2)) ** 2 * _w(s, xi2) + _w(lag, xi2))))
    k1 = np.meshgrid(*([grid.wavenumbers()] * grid.d), indexing="ij")[0]
    return float(np.sum(m * _w(t, xi2) * 2.0 * (1.0 - np.cos(k1 * lag))))


def increment_variance(kernel, axis, t, lag):
    """Continuum variance of the additive increment by quadrature (d = 1)."""
    if kernel.d != 1:
        raise NotImplementedError("the quadrature increment oracle is one-dimensional")

    def w(tau, x2):
        return -math.expm1(-tau * x2) / x2

    if axis == "Time":
        s = t - lag

        def f(x):
            x2 = x * x
            return float(spectral_density(kernel, x)) * (math.expm1(-0.5 * lag * x2) ** 2 * w(s, x2)
                                                         + w(lag, x2))
    else:
        def f(x):
            return float(spectral_density(kernel, x)) * w(t, x * x) * 2.0 * (1.0 - math.cos(x * lag))

    scale = 1.0 / math.sqrt(lag if axis == "Time" else lag * lag)
    total = 0.0
    if axis == "Time":
        for a, b in ((0.0, scale), (scale, 10 * scale), (10 * scale, math.inf)):
            total += integrate.quad(f, a, b, limit=800, epsrel=1e-10)[0]
        return 2.0 * total
    # the oscillating tail goes through the Fourier-weighted rule
    cut = 10 * scale
    for a, b in ((0.0, scale), (scale, cut)):
        total += integrate.quad(f, a, b, limit=800, epsrel=1e-10)[0]

    def g(x):
        return float(spectral_density(kernel, x)) * w(t, x * x) * 2.0

    total += integrate.quad(g, cut, math.inf, limit=800, epsrel=1e-10)[0]
    total -= integrate.quad(g, cut, math.inf, weight="cos", wvar=lag, limlst=200)[0]
    return 2.0 * total


# drift bound ------------------------------------------------------------------

def check_drift_bound(model, kernel, grid, paths, seed=0, probes=None, workers=None):
    """Largest |sum_n dt sum_z h^d Gamma_grid(t - t_n, x - z) b_i(u(t_n, z))| over paths,
    probes and components."""
    if probes is None:
        probes = [(grid.T, np.zeros(grid.d))]
    _, drift = probe_samples(model, kernel, grid, seed, paths, probes, workers, track_drift=True)
    return float(np.max(np.abs(drift))) if drift.size else 0.0


def drift_bound(model, T):
    return model.b.sup_norm() * T * (1.0 + 1e-6)
