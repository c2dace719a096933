import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spdelab.covariance import (Condition, Family, KernelParameterError, KernelSpec, NormalizationError,
                                SingularPointError, check_h_eta, check_integrability, evaluate_f,
                                spectral_density, validate_normalization)

KERNELS = [KernelSpec.white(1), KernelSpec.riesz(1, 0.5), KernelSpec.riesz(2, 1.0),
           KernelSpec.bessel(1, 0.5), KernelSpec.bessel(2, 1.0), KernelSpec.fractional((0.75, 0.75))]


def test_riesz_parameter_range():
    with pytest.raises(KernelParameterError):
        KernelSpec.riesz(1, 1.0)
    with pytest.raises(KernelParameterError):
        KernelSpec.bessel(3, 0.5)
    with pytest.raises(KernelParameterError):
        KernelSpec.fractional((0.75, 0.2))


def test_plugin_values():
    assert evaluate_f(KernelSpec.riesz(2, 1.0), [2.0, 0.0]) == pytest.approx(0.5)
    assert evaluate_f(KernelSpec.fractional((0.75, 0.75)), [1.0, 1.0]) == pytest.approx(1.0)
    k = KernelSpec.riesz(2, 1.0)
    assert spectral_density(k, [4.0, 0.0]) == pytest.approx(k.norm_constant * 0.25)
    k = KernelSpec.bessel(1, 0.5)
    assert spectral_density(k, [0.0]) == pytest.approx(k.norm_constant)
    k = KernelSpec.fractional((0.75, 0.75))
    assert spectral_density(k, [2.0, 2.0]) == pytest.approx(k.norm_constant * 0.5)


def test_bessel_against_frozen_oracle():
    # int_0^inf u^((a-d-2)/2) e^(-u) e^(-x^2/(4u)) du = 2 (x/2)^nu K_nu(x); mpmath, 30 digits
    k = KernelSpec.bessel(1, 0.5)
    assert evaluate_f(k, [1.0]) == pytest.approx(1.02447760897785035854, rel=1e-8)
    assert evaluate_f(k, [0.3]) == pytest.approx(4.65359440541470666298, rel=1e-8)
    assert evaluate_f(k, [2.0]) == pytest.approx(0.230756553681713513942, rel=1e-8)


def test_singular_points():
    with pytest.raises(SingularPointError):
        evaluate_f(KernelSpec.riesz(1, 0.5), [0.0])
    with pytest.raises(SingularPointError):
        spectral_density(KernelSpec.fractional((0.75, 0.75)), [0.0, 1.0])


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: f"{k.family.value}-d{k.d}")
def test_spectral_density_nonnegative(kernel):
    rng = np.random.default_rng(0)
    xi = rng.normal(scale=5.0, size=(10_000, kernel.d))
    assert np.all(spectral_density(kernel, xi) >= 0)


@given(st.floats(0.05, 5.0), st.floats(0.05, 3.0), st.booleans())
def test_f_is_even(r, s, flip):
    s = -s if flip else s
    for k in (KernelSpec.riesz(2, 1.0), KernelSpec.fractional((0.75, 0.75))):
        x = np.array([r, s])
        assert evaluate_f(k, x) == evaluate_f(k, -x)
    k = KernelSpec.bessel(1, 0.5)
    assert evaluate_f(k, [r]) == evaluate_f(k, [-r])


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: f"{k.family.value}-d{k.d}")
def test_normalization_duality(kernel):
    assert validate_normalization(kernel) < 1e-4


def test_white_normalization_is_tight():
    assert validate_normalization(KernelSpec.white(1)) < 1e-6


def test_doubled_constant_is_detected():
    k = KernelSpec.riesz(1, 0.5)
    bad = k.with_norm_constant(2 * k.norm_constant)
    with pytest.raises(NormalizationError) as exc:
        validate_normalization(bad)
    assert exc.value.residual == pytest.approx(0.5, abs=1e-3)


def test_integrability_decisions():
    rep = check_integrability(KernelSpec.riesz(2, 1.0))
    assert rep.holds and rep.condition is Condition.EQ23 and rep.parameter is None
    rep = check_integrability(KernelSpec.white(1))
    assert rep.holds
    # int (1 + xi^2)^-1 dxi / (2 pi) = 1/2
    assert rep.integral_value == pytest.approx(0.5, rel=1e-8)
    rep = check_integrability(KernelSpec.white(2))
    assert not rep.holds and math.isinf(rep.integral_value)


def test_h_eta_thresholds():
    assert check_h_eta(KernelSpec.riesz(2, 1.0), 0.6).holds
    assert not check_h_eta(KernelSpec.riesz(2, 1.0), 0.4).holds
    rep = check_h_eta(KernelSpec.fractional((0.75, 0.75)), 0.6)
    assert rep.holds and rep.threshold == pytest.approx(0.5)


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.5))
def test_h_eta_is_monotone(eta, step):
    eta2 = min(eta + step, 0.99)
    for k in KERNELS[1:]:
        if check_h_eta(k, eta).holds:
            assert check_h_eta(k, eta2).holds


def test_round_trip():
    for k in KERNELS:
        k2 = KernelSpec.from_dict(k.to_dict())
        assert k2 == k
    assert KernelSpec.from_dict({"family": "white"}).family is Family.WHITE
