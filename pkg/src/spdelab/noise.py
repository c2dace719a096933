"""Spatially homogeneous, temporally white Gaussian noise on a periodic lattice.

Fields live on ``N^d`` lattice points ``x_j = (j - N/2) h``, ``h = L / N``.
Lattice frequencies are ``xi_k = 2 pi k / L`` for the ``N`` FFT wavenumbers
per axis; everything above Nyquist is dropped.  Each mode carries the
spectral mass ``m_L(k)`` of its cell ``xi_k + [-pi/L, pi/L]^d``, taken as
``(2 pi / L)^d s(xi_k)`` except on cells where ``s`` is singular, where the
cell integral is used instead.

A sampled field stores the noise *density* over one time step, i.e. the cell
increment ``W((t_n, t_n+1] x cell)`` divided by the cell volume.  Its lag
covariance is ``dt * sum_k m_L(k) exp(i xi_k . lag)``.
"""

from dataclasses import dataclass
from functools import lru_cache
import math
import struct

import numpy as np
from scipy import integrate

from .covariance import Family, KernelSpec, riesz_constant
from .phi import NonIntegrableKernelError, require_integrable
from .rng import CounterStream, normal_block

LEAKAGE_TOL = 1e-10


class GridError(ValueError):
    pass


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def leakage(T, L, d):
    """Heat-kernel mass proxy Gamma(T, L/2) L^d seen across the periodic boundary."""
    if T <= 0:
        return 0.0
    return (2 * math.pi * T) ** (-d / 2) * math.exp(-(L / 2) ** 2 / (2 * T)) * L**d


@dataclass(frozen=True)
class GridSpec:
    d: int
    N: int
    L: float
    dt: float
    n_steps: int

    def __post_init__(self):
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "n_steps", int(self.n_steps))
        if self.d < 1:
            raise GridError("d must be positive")
        if not _is_pow2(self.N):
            raise GridError(f"N must be a power of two, got {self.N}")
        if self.N < 8:
            raise GridError(f"N must be at least 8, got {self.N}")
        if not self.L > 0:
            raise GridError("L must be positive")
        if not self.dt > 0:
            raise GridError("dt must be positive")
        if self.n_steps < 0:
            raise GridError("n_steps must be non-negative")
        leak = leakage(self.T, self.L, self.d)
        if not leak < LEAKAGE_TOL:
            raise GridError(f"box too small for the horizon: Gamma(T, L/2) L^d = {leak:.3g} >= {LEAKAGE_TOL}")

    @classmethod
    def for_horizon(cls, d, N, T, n_steps, window=0.0):
        """Grid for horizon T with box ``L = 2 window + 12 sqrt(T)``, widened until
        the leakage bound holds."""
        L = 2.0 * window + 12.0 * math.sqrt(T)
        while not leakage(T, L, d) < LEAKAGE_TOL:
            L *= 1.01
        return cls(d, N, L, T / n_steps, n_steps)

    @property
    def T(self):
        return self.n_steps * self.dt

    @property
    def h(self):
        return self.L / self.N

    @property
    def cell_volume(self):
        return self.h**self.d

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def axes(self):
        return tuple(range(-self.d, 0))

    @property
    def center(self):
        return (self.N // 2,) * self.d

    def coords(self):
        return (np.arange(self.N) - self.N // 2) * self.h

    def index_of(self, x):
        """Nearest lattice index for a point x (scalar when d = 1)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.d,):
            raise ValueError(f"expected a point in R^{self.d}")
        idx = np.rint(x / self.h).astype(int) + self.N // 2
        if np.any(idx < 0) or np.any(idx >= self.N):
            raise ValueError(f"point {x} outside the box")
        return tuple(int(i) for i in idx)

    def position(self, index):
        return (np.asarray(index) - self.N // 2) * self.h

    def step_of(self, t):
        n = t / self.dt
        k = int(round(n))
        if abs(n - k) > 1e-9 * max(1.0, abs(n)) or k < 0 or k > self.n_steps:
            raise ValueError(f"time {t} is not a grid time in [0, {self.T}]")
        return k

    def wavenumbers(self):
        """Frequencies 2 pi k / L per axis, FFT ordering."""
        return 2 * math.pi * np.fft.fftfreq(self.N, d=1.0 / self.N) / self.L

    def xi_squared(self, real=False):
        k = self.wavenumbers()
        grids = [k] * self.d
        if real:
            grids[-1] = k[: self.N // 2 + 1]
        mesh = np.meshgrid(*grids, indexing="ij")
        return sum(m * m for m in mesh)

    def to_dict(self):
        return {"d": self.d, "N": self.N, "L": self.L, "dt": self.dt, "n_steps": self.n_steps}


def _riesz_cube_integral(d, gamma):
    """int over [-1, 1]^d of |xi|^(gamma - d)."""
    if d == 1:
        return 2.0 / gamma
    if d == 2:
        v, _ = integrate.quad(lambda th: math.cos(th) ** (-gamma), 0.0, math.pi / 4, epsrel=1e-12)
        return 8.0 * v / gamma
    if d == 3:
        def f(phi, th):
            u = np.array([math.sin(phi) * math.cos(th), math.sin(phi) * math.sin(th), math.cos(phi)])
            return math.sin(phi) * np.max(np.abs(u)) ** (-gamma)
        v, _ = integrate.dblquad(f, 0.0, 2 * math.pi, 0.0, math.pi, epsrel=1e-10)
        return v / gamma
    raise NotImplementedError("Riesz zero-mode mass is implemented for d <= 3")


def _axis_masses_fractional(grid, h_j, c_j):
    # one-dimensional Riesz factor with exponent 1 - 2H; the k = 0 cell is integrated
    xi = grid.wavenumbers()
    dxi = 2 * math.pi / grid.L
    a = math.pi / grid.L
    out = np.empty_like(xi)
    nz = xi != 0
    out[nz] = dxi * c_j * np.abs(xi[nz]) ** (1.0 - 2.0 * h_j)
    out[~nz] = 2.0 * c_j * a ** (2.0 - 2.0 * h_j) / (2.0 - 2.0 * h_j)
    return out


@lru_cache(maxsize=32)
def mode_masses(kernel, grid):
    """mu-mass m_L(k) of each lattice mode, full FFT layout, shape grid.shape."""
    require_integrable(kernel)
    d = grid.d
    if kernel.d != d:
        raise GridError(f"kernel dimension {kernel.d} does not match grid dimension {d}")
    dxi_vol = (2 * math.pi / grid.L) ** d
    if kernel.family is Family.FRACTIONAL:
        out = np.ones(grid.shape)
        for j, hj in enumerate(kernel.params):
            cj = riesz_constant(1, 2.0 - 2.0 * hj)
            shape = [1] * d
            shape[j] = grid.N
            out = out * _axis_masses_fractional(grid, hj, cj).reshape(shape)
        # the per-axis constants multiply to the default norm constant
        scale = kernel.norm_constant / math.prod(riesz_constant(1, 2.0 - 2.0 * h) for h in kernel.params)
        out = out * scale
    else:
        xi2 = grid.xi_squared()
        c = kernel.norm_constant
        if kernel.family is Family.WHITE:
            out = np.full(grid.shape, c * dxi_vol)
        elif kernel.family is Family.BESSEL:
            out = dxi_vol * c * (1.0 + xi2) ** (-kernel.params[0] / 2.0)
        else:
            gamma = kernel.params[0]
            with np.errstate(divide="ignore"):
                out = dxi_vol * c * np.sqrt(xi2) ** (gamma - d)
            out[(0,) * d] = c * (math.pi / grid.L) ** gamma * _riesz_cube_integral(d, gamma)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _amplitude(kernel, grid):
    # per unit dt; rfft layout on the last axis
    m = mode_masses(kernel, grid)
    amp = np.sqrt(grid.N**grid.d * m)[..., : grid.N // 2 + 1]
    amp = np.ascontiguousarray(amp)
    amp.setflags(write=False)
    return amp


def synthesize(kernel, grid, z):
    """Noise density fields from standard normal lattice fields ``z`` (..., *grid.shape)."""
    if kernel.family is Family.WHITE:
        return z * math.sqrt(grid.dt / grid.cell_volume)
    amp = _amplitude(kernel, grid) * math.sqrt(grid.dt)
    zh = np.fft.rfftn(z, axes=grid.axes)
    return np.fft.irfftn(zh * amp, s=grid.shape, axes=grid.axes)


@dataclass(frozen=True)
class NoiseIncrementField:
    grid: GridSpec
    q: int
    data: np.ndarray  # (q, *grid.shape) noise density over one step

    @property
    def increments(self):
        """Cell increments W((t_n, t_n+1] x cell)."""
        return self.data * self.grid.cell_volume


def sample_increment(kernel, grid, q, stream, step=0):
    """Sample the q-channel noise of time step ``step`` for the path addressed by ``stream``."""
    try:
        require_integrable(kernel)
    except NonIntegrableKernelError:
        raise
    if not _is_pow2(grid.N):
        raise GridError("N must be a power of two")
    n = int(np.prod(grid.shape))
    z = np.stack([normal_block(stream.seed, [stream.path], step, j, n)[0].reshape(grid.shape)
                  for j in range(q)])
    return NoiseIncrementField(grid, q, synthesize(kernel, grid, z))


def _transform(field, grid):
    return np.fft.fftn(field, axes=grid.axes) * grid.cell_volume


def discrete_inner_product(phi, psi, kernel, grid):
    """<phi, psi>_H on the lattice: sum_l sum_k m_L(k) F phi_l(k) conj(F psi_l(k)).

    Fields have shape ``(q, *grid.shape)`` or ``grid.shape``; the discrete
    transform carries the factor h^d so white noise gives ``h^d sum phi psi``.
    Extra leading axes are treated as batch axes and summed over channels only
    when ``channel_axis`` fields are given, see ``gram``.
    """
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if phi.shape != psi.shape:
        raise GridError(f"field shapes differ: {phi.shape} vs {psi.shape}")
    if phi.shape[-grid.d:] != grid.shape:
        raise GridError(f"fields do not live on the {grid.shape} lattice")
    m = mode_masses(kernel, grid)
    a = _transform(phi, grid)
    b = _transform(psi, grid)
    return float(np.sum(m * (a.real * b.real + a.imag * b.imag)))


def spectral_norms(fields, kernel, grid):
    """Squared H-norms of a batch of fields, summed over all non-lattice axes but the first."""
    m = mode_masses(kernel, grid)
    a = _transform(fields, grid)
    p = m * (a.real**2 + a.imag**2)
    return p.reshape(p.shape[0], -1).sum(axis=1)


def walsh_integral(g, increments, grid=None):
    """sum_n sum_cells g(t_n, x) W((t_n, t_n+1] x cell), for a deterministic path g.

    ``g`` has shape ``(n_steps, q, *shape)``; ``increments`` is a sequence of
    NoiseIncrementField or an array of noise densities of the same shape.
    """
    if len(increments) and isinstance(increments[0], NoiseIncrementField):
        grid = increments[0].grid
        dens = np.stack([f.data for f in increments])
    else:
        if grid is None:
            raise ValueError("grid is required when increments are given as an array")
        dens = np.asarray(increments)
    g = np.asarray(g, dtype=float)
    if g.shape != dens.shape:
        raise GridError(f"integrand shape {g.shape} does not match increments {dens.shape}")
    return float(np.sum(g * dens) * grid.cell_volume)


def phi_grid(kernel, grid, t):
    """Band-limited, periodized Phi: sum_k m_L(k) int_0^t exp(-r |xi_k|^2) dr."""
    m = mode_masses(kernel, grid)
    xi2 = grid.xi_squared()
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(xi2 > 0, -np.expm1(-t * xi2) / xi2, t)
    return float(np.sum(m * w))


_HEADER = struct.Struct("<qqdqd")


def write_grid_file(path, data, grid, q, extra_axes=()):
    """Flat binary dump: little-endian (d, N, L, q, dt), optional extra int64
    axis lengths, then row-major float64 values."""
    data = np.ascontiguousarray(data, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(grid.d, grid.N, grid.L, q, grid.dt))
        for n in extra_axes:
            fh.write(struct.pack("<q", int(n)))
        fh.write(data.tobytes(order="C"))


def read_grid_file(path, n_extra=0):
    with open(path, "rb") as fh:
        raw = fh.read()
    d, N, L, q, dt = _HEADER.unpack_from(raw, 0)
    off = _HEADER.size
    extra = struct.unpack_from("<" + "q" * n_extra, raw, off) if n_extra else ()
    off += 8 * n_extra
    values = np.frombuffer(raw, dtype="<f8", offset=off)
    shape = tuple(extra) + (q,) + (N,) * d
    return {"d": d, "N": N, "L": L, "q": q, "dt": dt, "extra": extra}, values.reshape(shape)


__all__ = ["GridSpec", "GridError", "NoiseIncrementField", "CounterStream", "KernelSpec",
           "mode_masses", "synthesize", "sample_increment", "discrete_inner_product",
           "spectral_norms", "walsh_integral", "phi_grid", "write_grid_file", "read_grid_file",
           "leakage"]
