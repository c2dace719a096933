"""Catalog of coefficient maps with exact Jacobians.

A map R^m -> R^n is ``a0 + A phi(W u + c)`` where ``phi`` applies one of
identity, sin, cos, tanh to each inner coordinate.  Matrix-valued maps
(the diffusion sigma, m x q) are stored flattened row-major.
"""

from dataclasses import dataclass
import math

import numpy as np

_FUNCS = {
    "identity": (lambda z: z, lambda z: np.ones_like(z), False),
    "sin": (np.sin, np.cos, True),
    "cos": (np.cos, lambda z: -np.sin(z), True),
    "tanh": (np.tanh, lambda z: 1.0 / np.cosh(z) ** 2, True),
}


class CatalogError(ValueError):
    pass


def _as2d(x, rows, cols, name):
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = np.full((rows, cols), float(a))
    a = a.reshape(rows, cols) if a.size == rows * cols else a
    if a.shape != (rows, cols):
        raise CatalogError(f"{name} must have shape {(rows, cols)}, got {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class CoefficientMap:
    funcs: tuple  # one name per inner unit
    A: np.ndarray  # (n_out, p)
    W: np.ndarray  # (p, m)
    c: np.ndarray  # (p,)
    a0: np.ndarray  # (n_out,)

    def __post_init__(self):
        p = len(self.funcs)
        for f in self.funcs:
            if f not in _FUNCS:
                raise CatalogError(f"unknown catalog function {f!r}; choose from {sorted(_FUNCS)}")
        A = np.asarray(self.A, dtype=float).reshape(-1, p) if p else np.zeros((np.size(self.a0), 0))
        W = np.asarray(self.W, dtype=float)
        W = W.reshape(p, -1) if p else W.reshape(0, W.shape[-1] if W.ndim == 2 else 0)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(p))
        object.__setattr__(self, "a0", np.asarray(self.a0, dtype=float).reshape(-1))
        if A.shape[0] != self.a0.shape[0]:
            raise CatalogError("A and a0 disagree on the output dimension")

    # constructors
    @classmethod
    def constant(cls, value, m):
        value = np.atleast_1d(np.asarray(value, dtype=float)).ravel()
        return cls((), np.zeros((value.size, 0)), np.zeros((0, m)), np.zeros(0), value)

    @classmethod
    def elementwise(cls, func, m, scale=1.0, slope=1.0, shift=0.0, offset=0.0, n_out=None):
        """out_i = offset + scale * func(slope * u_i + shift); diagonal for n_out = m,
        or with n_out = m * m the diagonal of an m x m matrix."""
        n_out = m if n_out is None else n_out
        A = np.zeros((n_out, m))
        a0 = np.zeros(n_out)
        if n_out == m:
            idx = range(m)
        elif n_out == m * m:
            idx = [i * m + i for i in range(m)]
        else:
            raise CatalogError("elementwise maps need n_out in {m, m*m}")
        for i, r in enumerate(idx):
            A[r, i] = scale
            a0[r] = offset
        return cls((func,) * m, A, slope * np.eye(m), np.full(m, float(shift)), a0)

    @property
    def n_out(self):
        return self.a0.shape[0]

    @property
    def m(self):
        return self.W.shape[1]

    def _inner(self, u):
        # u: (m, *S) -> z: (p, *S)
        return np.tensordot(self.W, u, axes=(1, 0)) + self.c.reshape((-1,) + (1,) * (u.ndim - 1))

    def __call__(self, u):
        """Evaluate on a field stack u of shape (m, *S); returns (n_out, *S)."""
        u = np.asarray(u, dtype=float)
        tail = u.shape[1:]
        out = np.broadcast_to(self.a0.reshape((-1,) + (1,) * len(tail)), (self.n_out,) + tail).copy()
        if not self.funcs:
            return out
        z = self._inner(u)
        phi = np.stack([_FUNCS[f][0](z[k]) for k, f in enumerate(self.funcs)])
        return out + np.tensordot(self.A, phi, axes=(1, 0))

    def jacobian(self, u):
        """d out / d u on a field stack: shape (n_out, m, *S)."""
        u = np.asarray(u, dtype=float)
        m = u.shape[0]
        tail = u.shape[1:]
        if not self.funcs:
            return np.zeros((self.n_out, m) + tail)
        z = self._inner(u)
        dphi = np.stack([_FUNCS[f][1](z[k]) for k, f in enumerate(self.funcs)])
        # A diag(phi') W
        return np.einsum("op,p...,pm->om...", self.A, dphi, self.W)

    @property
    def is_constant(self):
        return not self.funcs or not np.any(self.A) or not np.any(self.W)

    @property
    def bounded(self):
        return all(_FUNCS[f][2] or not np.any(self.A[:, k]) or not np.any(self.W[k])
                   for k, f in enumerate(self.funcs))

    def sup_norm(self):
        """Upper bound on sup_u |out(u)| (Euclidean); exact for a single inner unit."""
        if not self.bounded:
            return math.inf
        if not self.funcs:
            return float(np.linalg.norm(self.a0))
        return float(np.linalg.norm(np.abs(self.a0) + np.abs(self.A).sum(axis=1)))

    def lipschitz(self):
        if not self.funcs:
            return 0.0
        return float(np.linalg.norm(self.A, 2) * np.linalg.norm(self.W, 2))

    def to_dict(self):
        return {"funcs": list(self.funcs), "A": self.A.tolist(), "W": self.W.tolist(),
                "c": self.c.tolist(), "a0": self.a0.tolist()}


def parse_coefficient(entry, m, n_out):
    """Build a map from its config form.

    Accepted forms: a number or list (constant), ``{"constant": v}``,
    ``{"fn": name, "scale", "slope", "shift", "offset"}`` (elementwise), or the
    general ``{"funcs", "A", "W", "c", "a0"}``.
    """
    if isinstance(entry, (int, float, list)):
        entry = {"constant": entry}
    if not isinstance(entry, dict):
        raise CatalogError(f"cannot read coefficient {entry!r}")
    if "constant" in entry:
        v = np.asarray(entry["constant"], dtype=float)
        if v.ndim == 0:
            if n_out == m * m and n_out != m:
                v = float(v) * np.eye(m).ravel()
            else:
                v = np.full(n_out, float(v))
        v = v.ravel()
        if v.size != n_out:
            raise CatalogError(f"constant coefficient needs {n_out} entries, got {v.size}")
        return CoefficientMap.constant(v, m)
    if "fn" in entry:
        return CoefficientMap.elementwise(entry["fn"], m, entry.get("scale", 1.0), entry.get("slope", 1.0),
                                          entry.get("shift", 0.0), entry.get("offset", 0.0), n_out)
    funcs = tuple(entry["funcs"])
    p = len(funcs)
    cmap = CoefficientMap(funcs, _as2d(entry["A"], n_out, p, "A"), _as2d(entry["W"], p, m, "W"),
                          np.asarray(entry.get("c", np.zeros(p)), dtype=float),
                          np.asarray(entry.get("a0", np.zeros(n_out)), dtype=float))
    return cmap
