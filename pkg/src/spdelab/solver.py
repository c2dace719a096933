"""Exponential-Euler spectral solver for the stochastic heat system.

    du_i = 1/2 Lap u_i dt + b_i(u) dt + sum_j sigma_ij(u) W^j(dt, dx),  u(0) = 0,

on the periodic lattice of a GridSpec.  Each step applies the heat semigroup
exactly per Fourier mode with coefficients frozen at the left end point:

    u^(n+1)^ = P u^n^ + Q F[b(u^n)] + S F[sigma(u^n) W^n]

with ``lam = |xi|^2 / 2``, ``P = exp(-dt lam)``, ``Q = (1 - P) / lam`` and
``S = sqrt((1 - P^2) / (2 dt lam))``.  ``S`` makes the noise of each step carry
the exact variance of the stochastic convolution over that step, so the
additive case is exact in distribution mode by mode.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
import math
import os

import numpy as np

from .coefficients import CatalogError, CoefficientMap, parse_coefficient
from .noise import GridError, GridSpec, NoiseIncrementField, synthesize
from .phi import require_integrable
from .rng import CounterStream, normal_block

DEFAULT_CHUNK = 512


class SolverInstability(FloatingPointError):
    def __init__(self, step, path=None):
        self.step = step
        self.path = path
        where = f" on path {path}" if path is not None else ""
        super().__init__(f"non-finite solution at step {step}{where}")


@dataclass(frozen=True, eq=False)
class Model:
    d: int
    m: int
    q: int
    sigma: CoefficientMap  # flattened m x q
    b: CoefficientMap
    h3: bool = False

    def __post_init__(self):
        if self.sigma.n_out != self.m * self.q:
            raise CatalogError(f"sigma must have {self.m * self.q} outputs, has {self.sigma.n_out}")
        if self.b.n_out != self.m:
            raise CatalogError(f"b must have {self.m} outputs, has {self.b.n_out}")
        for name, cmap in (("sigma", self.sigma), ("b", self.b)):
            if cmap.m != self.m:
                raise CatalogError(f"{name} takes {cmap.m} arguments, model has m = {self.m}")
        if self.h3 and not self.b.bounded:
            raise CatalogError("models flagged for ellipticity checks need a bounded drift")

    @classmethod
    def from_specs(cls, d, m, q, sigma, b, h3=False):
        return cls(d, m, q, parse_coefficient(sigma, m, m * q), parse_coefficient(b, m, m), h3)

    @classmethod
    def additive(cls, d, sigma=1.0, drift=0.0):
        return cls.from_specs(d, 1, 1, sigma, drift)

    @classmethod
    def scalar(cls, d, sigma, b, h3=True):
        return cls.from_specs(d, 1, 1, sigma, b, h3)

    @property
    def is_linear(self):
        return self.sigma.is_constant and self.b.is_constant

    def sigma_of(self, u):
        """sigma on a field stack (m, *S) -> (m, q, *S)."""
        s = self.sigma(u)
        return s.reshape((self.m, self.q) + s.shape[1:])

    def sigma_jacobian(self, u):
        """(m, q, m, *S): d sigma_ij / d u_l."""
        j = self.sigma.jacobian(u)
        return j.reshape((self.m, self.q, self.m) + j.shape[2:])

    def to_dict(self):
        return {"d": self.d, "m": self.m, "q": self.q, "sigma": self.sigma.to_dict(),
                "b": self.b.to_dict(), "h3": self.h3}


@dataclass
class SolutionField:
    grid: GridSpec
    n: int
    data: np.ndarray  # (m, *shape)

    @property
    def t(self):
        return self.n * self.grid.dt


@dataclass(frozen=True, eq=False)
class Multipliers:
    P: np.ndarray
    Q: np.ndarray
    S: np.ndarray


@lru_cache(maxsize=32)
def multipliers(grid):
    lam = 0.5 * grid.xi_squared(real=True)
    dt = grid.dt
    P = np.exp(-dt * lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = np.where(lam > 0, -np.expm1(-dt * lam) / lam, dt)
        S = np.where(lam > 0, np.sqrt(-np.expm1(-2 * dt * lam) / (2 * dt * lam)), 1.0)
    for a in (P, Q, S):
        a.setflags(write=False)
    return Multipliers(P, Q, S)


def _rfft(x, grid):
    return np.fft.rfftn(x, axes=grid.axes)


def _irfft(x, grid):
    return np.fft.irfftn(x, s=grid.shape, axes=grid.axes)


def _advance(uh, u, W, model, grid, mult):
    """One step for a batch: uh, u (B, m, *S) spectral/physical; W (B, q, *S)."""
    um = np.moveaxis(u, 1, 0)  # (m, B, *S)
    out = mult.P * uh
    if model.b.is_constant:
        if np.any(model.b.a0):
            # a constant drift only feeds the zero mode
            zero = (slice(None), slice(None)) + (0,) * grid.d
            out[zero] += mult.Q[(0,) * grid.d] * np.prod(grid.shape) * model.b.a0
    else:
        out += mult.Q * _rfft(np.moveaxis(model.b(um), 0, 1), grid)
    if model.sigma.is_constant:
        sig = model.sigma.a0.reshape(model.m, model.q)
        drive = np.einsum("ij,bj...->bi...", sig, W)
    else:
        sig = model.sigma_of(um)  # (m, q, B, *S)
        drive = np.einsum("ijb...,bj...->bi...", sig, W)
    out += mult.S * _rfft(drive, grid)
    return out, _irfft(out, grid)


def _check_finite(u, n, paths):
    if not np.all(np.isfinite(u)):
        bad = np.where(~np.isfinite(u.reshape(u.shape[0], -1)).all(axis=1))[0]
        raise SolverInstability(n, int(paths[bad[0]]) if paths is not None else None)


def step(u, dW, model, kernel=None):
    """Advance one SolutionField by one step with the given noise increment."""
    grid = u.grid
    if dW.grid != grid:
        raise GridError("noise and solution live on different grids")
    if u.data.shape[0] != model.m or dW.q != model.q:
        raise CatalogError("model dimensions do not match the fields")
    mult = multipliers(grid)
    x = u.data[None]
    _, nxt = _advance(_rfft(x, grid), x, dW.data[None], model, grid, mult)
    _check_finite(nxt, u.n, None)
    return SolutionField(grid, u.n + 1, nxt[0])


def resolve_probes(grid, probes):
    """(t, x) pairs -> sorted unique list of (step, index) plus the mapping back."""
    out = []
    for t, x in probes:
        out.append((grid.step_of(t), grid.index_of(x)))
    return out


def noise_batch(kernel, grid, q, seed, paths, n):
    """Noise densities of step n for a batch of paths: (B, q, *shape)."""
    size = int(np.prod(grid.shape))
    z = np.stack([normal_block(seed, paths, n, j, size) for j in range(q)], axis=1)
    z = z.reshape((len(paths), q) + grid.shape)
    return synthesize(kernel, grid, z)


@dataclass
class BatchResult:
    paths: np.ndarray
    probes: np.ndarray  # (n_probes, B, m)
    terminal: np.ndarray  # (B, m, *shape)
    trajectory: np.ndarray = None  # (B, K + 1, m, *shape)
    noise: np.ndarray = None  # (B, K, q, *shape)
    drift: np.ndarray = None  # (n_probes, B, m) drift convolution at the probes


def simulate_batch(model, kernel, grid, seed, paths, probes=(), n_steps=None, store=False,
                   noise=None, track_drift=False):
    """Advance a batch of paths from zero.

    ``probes`` is a list of (step, index) pairs; ``noise`` optionally replaces the
    generated densities, shape (B, K, q, *shape).  With ``track_drift`` the
    drift convolution sum_n dt Gamma_grid(t - t_n) * b(u^n) is accumulated
    alongside and read at the probes.
    """
    require_integrable(kernel)
    if kernel.d != grid.d or model.d != grid.d:
        raise GridError("kernel, model and grid dimensions differ")
    paths = np.asarray(paths, dtype=np.int64)
    B = len(paths)
    K = grid.n_steps if n_steps is None else int(n_steps)
    mult = multipliers(grid)
    u = np.zeros((B, model.m) + grid.shape)
    uh = _rfft(u, grid)
    vh = np.zeros_like(uh) if track_drift else None
    by_step = {}
    for k, (n, idx) in enumerate(probes):
        if n > K:
            raise ValueError(f"probe step {n} beyond the simulated {K} steps")
        by_step.setdefault(n, []).append((k, idx))
    rec = np.zeros((len(probes), B, model.m))
    drift_rec = np.zeros((len(probes), B, model.m)) if track_drift else None
    traj = np.zeros((B, K + 1, model.m) + grid.shape) if store else None
    nstore = np.zeros((B, K, model.q) + grid.shape) if store else None

    def record(n):
        if n in by_step:
            vv = _irfft(vh, grid) if track_drift else None
            for k, idx in by_step[n]:
                rec[k] = u[(slice(None), slice(None)) + idx]
                if track_drift:
                    drift_rec[k] = vv[(slice(None), slice(None)) + idx]

    record(0)
    for n in range(K):
        W = noise[:, n] if noise is not None else noise_batch(kernel, grid, model.q, seed, paths, n)
        if store:
            nstore[:, n] = W
            traj[:, n] = u
        if track_drift:
            bvals = np.moveaxis(model.b(np.moveaxis(u, 1, 0)), 0, 1)
            vh = mult.P * (vh + grid.dt * _rfft(bvals, grid))
        uh, u = _advance(uh, u, W, model, grid, mult)
        _check_finite(u, n + 1, paths)
        record(n + 1)
    if store:
        traj[:, K] = u
    return BatchResult(paths, rec, u, traj, nstore, drift_rec)


def _chunks(n_paths, chunk):
    return [np.arange(a, min(a + chunk, n_paths)) for a in range(0, n_paths, chunk)]


def default_workers():
    env = os.environ.get("SPDELAB_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def map_paths(func, n_paths, workers=None, chunk=DEFAULT_CHUNK):
    """Apply ``func(paths)`` over fixed path chunks; results come back in path order.

    Chunk boundaries do not depend on the worker count, and every path's noise
    is addressed by its own index, so results are identical for any pool size.
    """
    parts = _chunks(int(n_paths), chunk)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(parts) <= 1:
        return [func(p) for p in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, parts))


def probe_samples(model, kernel, grid, seed, n_paths, probes, workers=None, chunk=DEFAULT_CHUNK,
                  track_drift=False):
    """Probe values of ``n_paths`` independent paths: array (n_probes, n_paths, m).

    ``probes`` are (t, x) pairs.  With ``track_drift`` a second array of drift
    convolutions at the probes is returned as well.
    """
    res = resolve_probes(grid, probes)
    if n_paths == 0:
        empty = np.zeros((len(res), 0, model.m))
        return (empty, empty.copy()) if track_drift else empty
    K = max([n for n, _ in res], default=0)

    def run(p):
        r = simulate_batch(model, kernel, grid, seed, p, res, n_steps=K, track_drift=track_drift)
        return r.probes, r.drift

    parts = map_paths(run, n_paths, workers, chunk)
    vals = np.concatenate([a for a, _ in parts], axis=1)
    if track_drift:
        return vals, np.concatenate([b for _, b in parts], axis=1)
    return vals


@dataclass
class Solution:
    grid: GridSpec
    model: Model
    terminal: SolutionField
    trajectory: list = None
    noise: list = None
    probes: list = field(default_factory=list)


def solve(model, kernel, grid, stream, probes=(), store=False, noise=None, n_steps=None):
    """Solve one path from the zero field.

    Probe records are dicts {path_id, t, x, u}.  With ``store`` the full
    trajectory and the noise increments are kept for the derivative sweep.
    ``noise`` may supply the increments explicitly (list of NoiseIncrementField
    or an array (K, q, *shape) of densities).
    """
    res = resolve_probes(grid, probes)
    explicit = None
    if noise is not None:
        explicit = np.stack([f.data for f in noise]) if isinstance(noise[0], NoiseIncrementField) \
            else np.asarray(noise, dtype=float)
        explicit = explicit[None]
    r = simulate_batch(model, kernel, grid, stream.seed, [stream.path], res, n_steps=n_steps,
                       store=store, noise=explicit)
    K = grid.n_steps if n_steps is None else int(n_steps)
    recs = []
    for k, (t, x) in enumerate(probes):
        recs.append({"path_id": int(stream.path), "t": float(t),
                     "x": [float(v) for v in np.atleast_1d(x)], "u": r.probes[k, 0].tolist()})
    traj = noise_list = None
    if store:
        traj = [SolutionField(grid, n, r.trajectory[0, n]) for n in range(K + 1)]
        noise_list = [NoiseIncrementField(grid, model.q, r.noise[0, n]) for n in range(K)]
    return Solution(grid, model, SolutionField(grid, K, r.terminal[0]), traj, noise_list, recs)


@dataclass(frozen=True)
class EllipticityReport:
    C1_hat: float
    C2_hat: float
    passed: bool
    sample_size: int


def _unit_vectors(m, rng, n=256):
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        th = np.linspace(0.0, 2 * math.pi, 128, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    v = rng.standard_normal((n, m))
    v = np.concatenate([v, np.eye(m)])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def check_ellipticity(model, sample, seed=0, box=10.0, chunk=4096):
    """Sampled bounds of Q = sum_k (sigma(a)^T xi)_k (sigma(b)^T xi)_k / |xi|^2."""
    if not model.h3:
        raise ValueError("model is not flagged for the ellipticity hypothesis")
    rng = CounterStream(seed).numpy_generator(purpose=7)
    xi = _unit_vectors(model.m, rng)
    xi2 = np.sum(xi * xi, axis=1)
    lo, hi = math.inf, -math.inf
    for start in range(0, sample, chunk):
        n = min(chunk, sample - start)
        a = rng.uniform(-box, box, (model.m, n))
        bb = rng.uniform(-box, box, (model.m, n))
        sa = model.sigma_of(a)  # (m, q, n)
        sb = model.sigma_of(bb)
        pa = np.einsum("ijn,vi->vjn", sa, xi)
        pb = np.einsum("ijn,vi->vjn", sb, xi)
        Q = np.sum(pa * pb, axis=1) / xi2[:, None]
        lo = min(lo, float(Q.min()))
        hi = max(hi, float(Q.max()))
    return EllipticityReport(lo, hi, bool(lo > 0 and np.isfinite(hi)), int(sample))


def check_moment_bound(model, kernel, grid, p, paths, seed=0, probes=None, workers=None):
    """Monte Carlo sup over probes of E|u(t, x)|^p."""
    if p not in (2, 4, 6):
        raise ValueError("p must be 2, 4 or 6")
    if probes is None:
        probes = [(grid.T, np.zeros(grid.d))]
    vals = probe_samples(model, kernel, grid, seed, paths, probes, workers)
    norms = np.linalg.norm(vals, axis=2) ** p
    return float(norms.mean(axis=1).max())
