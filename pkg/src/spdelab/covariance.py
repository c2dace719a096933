"""Homogeneous covariance kernels and their spectral measures.

Fourier convention: ``F phi(xi) = int phi(x) exp(-i xi.x) dx``.  A kernel is
the pair ``(f, s)`` with ``f(x) = int s(xi) exp(-i xi.x) dxi``, so that
``int f phi dx = int F phi(xi) s(xi) dxi``.  With this convention white noise
has the flat density ``(2 pi)^-d``.

All four families are isotropic or separable-homogeneous, so every spectral
integral against an isotropic test function reduces to a one-dimensional
radial integral with weight ``radial_weight(kernel, rho)``.
"""

from dataclasses import dataclass, field
from enum import Enum
import math
import warnings

import numpy as np
from scipy import integrate, special


class Family(str, Enum):
    WHITE = "white"
    RIESZ = "riesz"
    BESSEL = "bessel"
    FRACTIONAL = "fractional"


class Condition(str, Enum):
    EQ23 = "Eq23"
    HETA = "HEta"


class KernelParameterError(ValueError):
    pass


class SingularPointError(ValueError):
    pass


class QuadratureError(RuntimeError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class NormalizationError(RuntimeError):
    def __init__(self, message, residual, worst_scale):
        super().__init__(message)
        self.residual = residual
        self.worst_scale = worst_scale


def sphere_area(d):
    """Surface area of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def riesz_constant(d, gamma):
    """Spectral constant C with ``|x|^-gamma = int C |xi|^(gamma-d) e^{-i xi.x} dxi``."""
    return math.gamma((d - gamma) / 2) / (math.pi ** (d / 2) * 2.0**gamma * math.gamma(gamma / 2))


def bessel_constant(d, alpha):
    return math.gamma(alpha / 2) / math.pi ** (d / 2)


def fractional_constant(hurst):
    return math.prod(riesz_constant(1, 2.0 - 2.0 * h) for h in hurst)


@dataclass(frozen=True)
class KernelSpec:
    family: Family
    d: int
    params: tuple = ()
    norm_constant: float = field(default=None)

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        d = int(self.d)
        if d < 1:
            raise KernelParameterError(f"spatial dimension must be positive, got {self.d}")
        object.__setattr__(self, "d", d)
        p = self.params
        if fam is Family.WHITE:
            if p:
                raise KernelParameterError("white noise takes no parameters")
            default = (2 * math.pi) ** (-d)
        elif fam is Family.RIESZ:
            if len(p) != 1:
                raise KernelParameterError("Riesz kernel needs exactly one parameter gamma")
            (g,) = p
            if not 0.0 < g < min(2.0, d):
                raise KernelParameterError(f"Riesz kernel needs 0 < gamma < min(2, d) = {min(2, d)}, got {g}")
            default = riesz_constant(d, g)
        elif fam is Family.BESSEL:
            if len(p) != 1:
                raise KernelParameterError("Bessel kernel needs exactly one parameter alpha")
            (a,) = p
            # alpha > 0 keeps f locally integrable
            if not max(d - 2.0, 0.0) < a < d:
                raise KernelParameterError(f"Bessel kernel needs max(d-2, 0) < alpha < d, got {a}")
            default = bessel_constant(d, a)
        else:
            if len(p) != d:
                raise KernelParameterError(f"fractional kernel needs {d} Hurst indices, got {len(p)}")
            if not all(0.5 < h < 1.0 for h in p):
                raise KernelParameterError(f"fractional kernel needs 1/2 < H_j < 1, got {p}")
            if not sum(p) > d - 1:
                raise KernelParameterError(f"fractional kernel needs sum(H) > d - 1, got {sum(p)}")
            default = fractional_constant(p)
        if self.norm_constant is None:
            object.__setattr__(self, "norm_constant", default)
        elif not self.norm_constant > 0:
            raise KernelParameterError("norm_constant must be positive")
        else:
            object.__setattr__(self, "norm_constant", float(self.norm_constant))

    @classmethod
    def white(cls, d=1):
        return cls(Family.WHITE, d)

    @classmethod
    def riesz(cls, d, gamma):
        return cls(Family.RIESZ, d, (gamma,))

    @classmethod
    def bessel(cls, d, alpha):
        return cls(Family.BESSEL, d, (alpha,))

    @classmethod
    def fractional(cls, hurst):
        hurst = tuple(hurst)
        return cls(Family.FRACTIONAL, len(hurst), hurst)

    def with_norm_constant(self, value):
        return KernelSpec(self.family, self.d, self.params, value)

    @property
    def isotropic(self):
        return self.family is not Family.FRACTIONAL

    def to_dict(self):
        out = {"family": self.family.value, "d": self.d}
        if self.family is Family.RIESZ:
            out["gamma"] = self.params[0]
        elif self.family is Family.BESSEL:
            out["alpha"] = self.params[0]
        elif self.family is Family.FRACTIONAL:
            out["hurst"] = list(self.params)
        return out

    @classmethod
    def from_dict(cls, data):
        fam = Family(data["family"])
        if fam is Family.WHITE:
            return cls.white(data.get("d", 1))
        if fam is Family.RIESZ:
            return cls.riesz(data["d"], data["gamma"])
        if fam is Family.BESSEL:
            return cls.bessel(data["d"], data["alpha"])
        hurst = data["hurst"]
        if "d" in data and data["d"] != len(hurst):
            raise KernelParameterError("d does not match the number of Hurst indices")
        return cls.fractional(hurst)


def _quad(func, a, b, epsrel=1e-10, epsabs=0.0, limit=500, what="integral"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(func, a, b, epsrel=epsrel, epsabs=epsabs, limit=limit, full_output=1)
    val, err = res[0], res[1]
    if len(res) > 3 and abs(err) > max(epsabs, 10 * epsrel * abs(val)):
        raise QuadratureError(f"{what} did not converge: {res[3]}", achieved=err / max(abs(val), 1e-300))
    return val, err


def radial_quad(func, epsrel=1e-10, split=1.0, what="radial integral"):
    """Integrate over (0, inf), splitting at ``split`` so both ends are handled."""
    v1, e1 = _quad(func, 0.0, split, epsrel=epsrel, what=what)
    v2, e2 = _quad(func, split, np.inf, epsrel=epsrel, what=what)
    return v1 + v2, e1 + e2


def _bessel_f_integrand(v, nu, a):
    if abs(v) > 700.0:
        return 0.0
    expo = nu * v - math.exp(v) - a * math.exp(-v)
    return math.exp(expo) if expo > -745.0 else 0.0


def evaluate_f(kernel, x):
    """Covariance value f(x) for a point x != 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (kernel.d,):
        raise ValueError(f"expected a point in R^{kernel.d}, got shape {x.shape}")
    fam = kernel.family
    r = float(np.sqrt(np.sum(x * x)))
    if fam is Family.WHITE:
        # the Dirac mass has no pointwise value away from the origin
        if r == 0.0:
            raise SingularPointError("white-noise covariance is a Dirac mass at 0")
        return 0.0
    if fam is Family.RIESZ:
        if r == 0.0:
            raise SingularPointError("Riesz kernel is singular at x = 0")
        return r ** (-kernel.params[0])
    if fam is Family.FRACTIONAL:
        if np.any(x == 0.0):
            raise SingularPointError("fractional kernel is singular on the coordinate hyperplanes")
        return float(np.prod(np.abs(x) ** (2.0 * np.asarray(kernel.params) - 2.0)))
    if r == 0.0:
        raise SingularPointError("Bessel kernel is singular at x = 0 for alpha < d")
    # u = e^v tames both the u -> 0 and the u -> inf behaviour
    nu = (kernel.params[0] - kernel.d) / 2.0
    a = r * r / 4.0
    v_peak = math.log((nu + math.sqrt(nu * nu + 4.0 * a)) / 2.0)
    g = lambda v: _bessel_f_integrand(v, nu, a)
    lo, e1 = _quad(g, -np.inf, v_peak, epsrel=1e-10, what="Bessel kernel")
    hi, e2 = _quad(g, v_peak, np.inf, epsrel=1e-10, what="Bessel kernel")
    val = lo + hi
    if e1 + e2 > 1e-8 * val:
        raise QuadratureError("Bessel kernel quadrature missed 1e-8 relative tolerance",
                              achieved=(e1 + e2) / val)
    return val


def spectral_density(kernel, xi):
    """Spectral density s(xi) = d mu / d xi, including the norm constant.

    ``xi`` may be a single point or an array with trailing axis of length d
    (for d = 1 a bare scalar or 1-d array of frequencies is accepted).
    """
    xi = np.asarray(xi, dtype=float)
    if kernel.d == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        xi = xi[..., None]
    if xi.shape[-1] != kernel.d:
        raise ValueError(f"frequency must have trailing dimension {kernel.d}")
    c = kernel.norm_constant
    fam = kernel.family
    if fam is Family.WHITE:
        out = np.full(xi.shape[:-1], c)
    elif fam is Family.BESSEL:
        rho2 = np.sum(xi * xi, axis=-1)
        out = c * (1.0 + rho2) ** (-kernel.params[0] / 2.0)
    elif fam is Family.RIESZ:
        rho = np.sqrt(np.sum(xi * xi, axis=-1))
        if np.any(rho == 0.0):
            raise SingularPointError("Riesz spectral density is singular at xi = 0")
        out = c * rho ** (kernel.params[0] - kernel.d)
    else:
        if np.any(xi == 0.0):
            raise SingularPointError("fractional spectral density is singular on the axes")
        out = c * np.prod(np.abs(xi) ** (1.0 - 2.0 * np.asarray(kernel.params)), axis=-1)
    return out if out.ndim else float(out)


def fractional_angular_factor(hurst):
    """Integral over the unit sphere of prod_j |theta_j|^(1 - 2 H_j)."""
    hurst = np.asarray(hurst, dtype=float)
    return 2.0 * np.prod(special.gamma(1.0 - hurst)) / special.gamma(np.sum(1.0 - hurst))


def radial_weight(kernel, rho):
    """Density of mu(|xi| in d rho) with respect to d rho."""
    rho = np.asarray(rho, dtype=float)
    d = kernel.d
    if kernel.family is Family.FRACTIONAL:
        hsum = sum(kernel.params)
        a = fractional_angular_factor(kernel.params)
        return kernel.norm_constant * a * rho ** (2.0 * d - 1.0 - 2.0 * hsum)
    if kernel.family is Family.WHITE:
        s = kernel.norm_constant
    elif kernel.family is Family.BESSEL:
        s = kernel.norm_constant * (1.0 + rho * rho) ** (-kernel.params[0] / 2.0)
    else:
        s = kernel.norm_constant * rho ** (kernel.params[0] - d)
    return sphere_area(d) * rho ** (d - 1) * s


def spectral_integral(kernel, g, epsrel=1e-10, what="spectral integral"):
    """int g(|xi|) mu(d xi) for a radial function g, by radial quadrature."""
    return radial_quad(lambda r: g(r) * float(radial_weight(kernel, r)), epsrel=epsrel, what=what)


def _gaussian_lhs(kernel, s):
    d = kernel.d
    if kernel.family is Family.WHITE:
        return 1.0
    if kernel.family is Family.FRACTIONAL:
        out = 1.0
        for h in kernel.params:
            v, _ = radial_quad(lambda x: 2.0 * x ** (2 * h - 2) * math.exp(-x * x / (2 * s * s)), what="duality")
            out *= v
        return out
    basis = np.zeros(d)

    def integrand(r):
        if r == 0.0:
            return 0.0
        basis[0] = r
        return sphere_area(d) * r ** (d - 1) * evaluate_f(kernel, basis) * math.exp(-r * r / (2 * s * s))

    v, _ = radial_quad(integrand, epsrel=1e-9, split=s, what="duality")
    return v


def validate_normalization(kernel, scales=(0.5, 1.0, 2.0), tol=1e-4):
    """Largest relative mismatch between the two sides of the duality identity.

    Test functions are phi(x) = exp(-|x|^2 / (2 s^2)) for s in ``scales``.
    Raises NormalizationError when the mismatch exceeds ``tol``.
    """
    worst, worst_s = 0.0, None
    for s in scales:
        lhs = _gaussian_lhs(kernel, s)
        ft = lambda r: (2 * math.pi * s * s) ** (kernel.d / 2) * math.exp(-0.5 * (s * r) ** 2)
        rhs, _ = spectral_integral(kernel, ft, what="duality")
        resid = abs(lhs - rhs) / abs(rhs)
        if resid > worst or worst_s is None:
            worst, worst_s = resid, s
    if worst > tol:
        raise NormalizationError(
            f"duality mismatch {worst:.3g} for Gaussian test function with s = {worst_s}",
            residual=worst, worst_scale=worst_s)
    return worst


@dataclass(frozen=True)
class ConditionReport:
    condition: Condition
    parameter: float | None
    holds: bool
    integral_value: float
    quadrature_error: float
    threshold: float


def eta_threshold(kernel):
    """Infimum of the eta for which int (1 + |xi|^2)^-eta mu(d xi) is finite.

    Obtained by power counting of the radial weight at infinity; all the
    families are locally integrable at the origin.
    """
    fam, d, p = kernel.family, kernel.d, kernel.params
    if fam is Family.WHITE:
        return d / 2.0
    if fam is Family.RIESZ:
        return p[0] / 2.0
    if fam is Family.BESSEL:
        return (d - p[0]) / 2.0
    return d - sum(p)


def _condition(kernel, eta, cond):
    thr = eta_threshold(kernel)
    holds = eta > thr
    param = eta if cond is Condition.HETA else None
    if not holds:
        return ConditionReport(cond, param, False, math.inf, math.nan, thr)
    try:
        val, err = spectral_integral(kernel, lambda r: (1.0 + r * r) ** (-eta), epsrel=1e-8,
                                     what="integrability diagnostic")
    except QuadratureError as exc:
        # slowly convergent tails near the threshold: the analytic decision stands
        val, err = math.nan, exc.achieved
    return ConditionReport(cond, param, True, val, err, thr)


def check_integrability(kernel):
    return _condition(kernel, 1.0, Condition.EQ23)


def check_h_eta(kernel, eta):
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    return _condition(kernel, float(eta), Condition.HETA)
