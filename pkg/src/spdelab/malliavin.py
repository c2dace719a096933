"""Malliavin derivative of a probe value by a reverse sweep through the scheme.

For the step ``u^(n+1) = P u^n + Q b(u^n) + S (sigma(u^n) W^n)`` the cotangent
``lam^n = d u_i^K(x) / d u^n`` obeys

    lam^n = P lam^(n+1) + grad b^T (Q lam^(n+1)) + sum_j grad sigma_.j^T (W_j^n * S lam^(n+1))

(all three multipliers are real and even, hence self-adjoint), and the
derivative with respect to the noise density of step n at cell z is
``sum_i sigma_ij(u^n(z)) (S lam^(n+1))_i(z)``.  Dividing by the cell volume
gives the discrete D_{r_n, z} u_i(t, x), whose H-norm over time is the
Malliavin matrix.
"""

from dataclasses import dataclass

import numpy as np

from .noise import GridError, mode_masses, write_grid_file
from .phi import compute_phi
from .reports import Hypothesis, ScalingReport, loglog_fit
from .solver import _irfft, _rfft, map_paths, multipliers, simulate_batch


class TrajectoryMissingError(ValueError):
    pass


@dataclass
class DerivativeField:
    target: tuple  # (t, x)
    data: np.ndarray  # (n_r, m, q, *shape): D_{r_n, z}^(j) u_i(t, x)
    grid: object

    @property
    def n_r(self):
        return self.data.shape[0]

    def dump(self, path):
        n_r, m, q = self.data.shape[:3]
        write_grid_file(path, self.data, self.grid, q, extra_axes=(n_r, m))


@dataclass
class MalliavinMatrix:
    entries: np.ndarray
    target: tuple

    def eigenvalues(self):
        return np.linalg.eigvalsh(0.5 * (self.entries + self.entries.T))

    def to_dict(self):
        return {"entries": self.entries.tolist(), "eigenvalues": self.eigenvalues().tolist(),
                "target": {"t": float(self.target[0]), "x": np.atleast_1d(self.target[1]).tolist()}}


def adjoint_batch(model, grid, traj, noise, K, index):
    """Derivative tensor for a batch of stored paths.

    traj: (B, >=K+1, m, *S), noise: (B, >=K, q, *S).  Returns (B, n_steps, m, q, *S)
    with the cell-volume normalization applied; steps n >= K are zero.
    """
    B = traj.shape[0]
    m, q = model.m, model.q
    mult = multipliers(grid)
    out = np.zeros((B, grid.n_steps, m, q) + grid.shape)
    const_sigma = model.sigma.is_constant
    const_b = model.b.is_constant
    for i in range(m):
        lam = np.zeros((B, m) + grid.shape)
        lam[(slice(None), i) + tuple(index)] = 1.0
        for n in range(K - 1, -1, -1):
            lh = _rfft(lam, grid)
            slam = _irfft(mult.S * lh, grid)
            un = np.moveaxis(traj[:, n], 1, 0)  # (m, B, *S)
            if const_sigma:
                sig = model.sigma.a0.reshape(m, q)
                out[:, n, i] = np.einsum("kj,bk...->bj...", sig, slam)
            else:
                sig = model.sigma_of(un)
                out[:, n, i] = np.einsum("kjb...,bk...->bj...", sig, slam)
            if n == 0:
                break
            new = _irfft(mult.P * lh, grid)
            if not const_b:
                qlam = _irfft(mult.Q * lh, grid)
                jb = model.b.jacobian(un)  # (m_out, m, B, *S)
                new += np.einsum("klb...,bk...->bl...", jb, qlam)
            if not const_sigma:
                js = model.sigma_jacobian(un)  # (m, q, m, B, *S)
                new += np.einsum("kjlb...,bj...,bk...->bl...", js, noise[:, n], slam)
            lam = new
    out /= grid.cell_volume
    return out


def derivative_field(solution, model, kernel, target):
    """Discrete Malliavin derivative of u(t, x) for a path solved with ``store=True``."""
    if solution.trajectory is None or solution.noise is None:
        raise TrajectoryMissingError("solve the path with store=True to keep the trajectory")
    grid = solution.grid
    if kernel.d != grid.d:
        raise GridError("kernel and grid dimensions differ")
    t, x = target
    K = grid.step_of(t)
    if K > len(solution.noise):
        raise ValueError("target time lies beyond the stored trajectory")
    idx = grid.index_of(x)
    traj = np.stack([f.data for f in solution.trajectory])[None]
    noise = np.stack([f.data for f in solution.noise])[None] if solution.noise else \
        np.zeros((1, 0, model.q) + grid.shape)
    data = adjoint_batch(model, grid, traj, noise, K, idx)[0]
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite derivative field")
    return DerivativeField((float(t), x), data, grid)


def _spectral(data, grid):
    return np.fft.fftn(data, axes=grid.axes) * grid.cell_volume


def step_grams(data, kernel, grid):
    """Per-step Gram matrices sum_j <D_i(n, j), D_k(n, j)>_H: (..., n_r, m, m)."""
    F = _spectral(data, grid)
    mm = mode_masses(kernel, grid)
    lat = "xyzw"[:grid.d]
    subs = f"...iq{lat},...kq{lat}->...ik"
    return np.einsum(subs, F.real * mm, F.real) + np.einsum(subs, F.imag * mm, F.imag)


def malliavin_matrix(D, kernel, grid):
    """M_ik = sum_n dt <D_i(r_n), D_k(r_n)>_H."""
    if D.grid != grid or D.data.shape[3:] != grid.shape:
        raise GridError("derivative field lives on a different grid")
    M = grid.dt * step_grams(D.data, kernel, grid).sum(axis=0)
    M = 0.5 * (M + M.T)
    return MalliavinMatrix(M, D.target)


def derivative_batch(model, kernel, grid, seed, paths, target, grams=True):
    """Forward solve plus reverse sweep for a batch of paths.

    Returns per-step Gram matrices (B, n_r, m, m) when ``grams``, otherwise the
    raw derivative tensors (B, n_r, m, q, *S).
    """
    t, x = target
    K = grid.step_of(t)
    idx = grid.index_of(x)
    r = simulate_batch(model, kernel, grid, seed, paths, n_steps=K, store=True)
    D = adjoint_batch(model, grid, r.trajectory, r.noise, K, idx)
    if not grams:
        return D
    return step_grams(D, kernel, grid)


def window_norms(model, kernel, grid, seed, n_paths, target, workers=None, chunk=64):
    """Per-path, per-step squared H-norms sum_j ||D_(r_n) u_i||^2 of the first component:
    array (n_paths, n_r)."""
    def run(p):
        g = derivative_batch(model, kernel, grid, seed, p, target)
        return g[..., 0, 0]

    return np.concatenate(map_paths(run, n_paths, workers, chunk), axis=0)


def derivative_window_stats(model, kernel, grid, deltas, paths, seed=0, target=None, workers=None):
    """E ||D u(t, x)||^2 over [t - delta, t] and Phi(delta) for each window."""
    if target is None:
        target = (grid.T, np.zeros(grid.d))
    K = grid.step_of(target[0])
    steps = []
    for delta in deltas:
        w = int(round(delta / grid.dt))
        if w < 1 or w > K or abs(w * grid.dt - delta) > 1e-9 * max(1.0, delta):
            raise ValueError(f"window {delta} is not a positive multiple of dt up to t")
        steps.append(w)
    norms = window_norms(model, kernel, grid, seed, paths, target, workers)
    stats = np.array([grid.dt * norms[:, K - w:K].sum(axis=1).mean() for w in steps])
    phis = np.array([compute_phi(kernel, delta) for delta in deltas])
    return stats, phis


def check_derivative_scaling(model, kernel, grid, deltas, paths, seed=0, target=None,
                             workers=None, max_spread=3.0):
    """Windowed derivative norm against Phi(delta).

    The fitted exponent is the log-log slope of the statistic against Phi(delta)
    (reference 1).  The check passes when the ratio statistic / Phi(delta)
    varies by at most a factor ``max_spread`` across the windows; ``bound``
    holds the largest ratio.
    """
    if not model.h3:
        raise ValueError("model is not flagged for the ellipticity hypothesis")
    stats, phis = derivative_window_stats(model, kernel, grid, deltas, paths, seed, target, workers)
    ratios = stats / phis
    slope, _, r2 = loglog_fit(phis, stats)
    spread = float(ratios.max() / ratios.min())
    ok = bool(np.all(np.isfinite(ratios)) and ratios.min() > 0 and spread <= max_spread)
    return ScalingReport(Hypothesis.DERIVATIVE_SCALING, slope, 1.0, r2, ok, max_spread,
                         float(ratios.max()))


__all__ = ["DerivativeField", "MalliavinMatrix", "derivative_field", "malliavin_matrix",
           "check_derivative_scaling", "derivative_window_stats", "adjoint_batch", "derivative_batch", "window_norms",
           "step_grams", "TrajectoryMissingError"]
