import math

import numpy as np
import pytest
from scipy import special

from bessel import (bessel_eval, bessel_k, bessel_k_closed_form, bessel_k_derivative_identity_residual,
                    bessel_k_recurrence_residual, bessel_k_upper_bound, tempering_coefficient,
                    tempering_coefficient_integral, tfbm_covariance, variance_function)
from errors import DomainError


@pytest.mark.parametrize("v", [0.0, 0.3, 0.5, 1.2, 2.7])
@pytest.mark.parametrize("z", [0.05, 0.5, 1.0, 5.0, 30.0])
def test_bessel_k_matches_scipy(v, z):
    """Quadrature agrees with scipy's kv."""
    assert bessel_k(v, z) == pytest.approx(special.kv(v, z), rel=1e-9)


def test_bessel_k_even_in_order():
    """K_{-v} = K_v."""
    assert bessel_k(-0.3, 1.7) == bessel_k(0.3, 1.7)


def test_bessel_k_half_order_value():
    """K_{1/2}(1) = sqrt(pi/2) e^{-1}."""
    assert bessel_k(0.5, 1.0) == pytest.approx(math.sqrt(math.pi / 2.0) / math.e, rel=1e-12)


@pytest.mark.parametrize("v", [0.5, 1.5, 2.5, 3.5])
def test_closed_form_matches_quadrature(v):
    """Half-integer closed forms agree with quadrature."""
    for z in (0.2, 1.0, 4.0):
        assert bessel_k_closed_form(v, z) == pytest.approx(bessel_k(v, z), rel=1e-10)


def test_bessel_eval_records_method():
    """BesselEval carries order, argument and method."""
    out = bessel_eval(1.5, 2.0, method="closed_form")
    assert out.method == "closed_form"
    assert out.order == 1.5 and out.argument == 2.0
    assert out.value > 0


def test_bessel_domain_errors():
    """Nonpositive arguments, large orders and unknown methods are rejected."""
    with pytest.raises(DomainError):
        bessel_k(0.3, 0.0)
    with pytest.raises(DomainError):
        bessel_k(0.3, -1.0)
    with pytest.raises(DomainError):
        bessel_k(4.5, 1.0)
    with pytest.raises(DomainError):
        bessel_k(0.3, 1.0, method="series")
    with pytest.raises(DomainError):
        bessel_k_closed_form(0.3, 1.0)


@pytest.mark.parametrize("v", [0.3, 0.8, 1.5, 2.2])
@pytest.mark.parametrize("z", [0.2, 1.0, 3.0])
def test_recurrence_identity(v, z):
    """K_{v-1} = K_{v+1} - (2v/z) K_v."""
    assert bessel_k_recurrence_residual(v, z) <= 1e-8


@pytest.mark.parametrize("v", [0.3, 0.8, 1.5])
@pytest.mark.parametrize("z", [0.5, 1.0, 3.0])
def test_derivative_identity(v, z):
    """d/dz (z^v K_v) = -z^v K_{v-1}."""
    scale = z ** v * bessel_k(v - 1.0, z)
    assert bessel_k_derivative_identity_residual(v, z, 1e-4) <= 1e-7 * max(1.0, scale)


def test_derivative_identity_residual_is_second_order():
    """Halving the step cuts the central-difference residual by about four."""
    coarse = bessel_k_derivative_identity_residual(0.3, 1.0, 0.1)
    fine = bessel_k_derivative_identity_residual(0.3, 1.0, 0.05)
    assert 3.5 <= coarse / fine <= 4.5


def test_derivative_identity_needs_step_below_argument():
    """The central difference must stay inside z > 0."""
    with pytest.raises(DomainError):
        bessel_k_derivative_identity_residual(0.3, 0.1, 0.2)


@pytest.mark.parametrize("v", [0.1, 0.3, 0.45, 0.6, 1.0, 1.2])
@pytest.mark.parametrize("x", [0.1, 1.0, 5.0])
def test_upper_bound_holds_strictly(v, x):
    """The elementary bound dominates K_v away from v = 1/2."""
    assert bessel_k(v, x) < bessel_k_upper_bound(v, x)


def test_upper_bound_is_attained_at_half():
    """At v = 1/2 the bound equals K_{1/2}."""
    for x in (0.1, 1.0, 5.0):
        assert bessel_k_upper_bound(0.5, x) == pytest.approx(bessel_k(0.5, x), rel=1e-12)


def test_upper_bound_rejects_other_orders():
    """Orders outside (0, 3/2) have no elementary bound."""
    with pytest.raises(DomainError):
        bessel_k_upper_bound(1.6, 1.0)
    with pytest.raises(DomainError):
        bessel_k_upper_bound(0.0, 1.0)


@pytest.mark.parametrize("t", [0.01, 0.1, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("H", [0.26, 0.30, 0.33])
@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_closed_form_matches_integral_representation(t, H, lam):
    """C_t² from the Bessel closed form agrees with the integral representation."""
    assert tempering_coefficient(H, lam, t) == pytest.approx(tempering_coefficient_integral(H, lam, t), rel=1e-6)


def test_tempering_coefficient_vanishes_at_zero():
    """C_0² = 0."""
    assert tempering_coefficient(0.3, 1.0, 0.0) == 0.0
    assert variance_function(0.3, 1.0, 0.0) == 0.0


def test_tempering_coefficient_weak_tempering_limit():
    """As λt -> 0, C_t² tends to -Γ(H+1/2)Γ(-H) / (√π 2^{2H})."""
    H = 0.3
    limit = -special.gamma(H + 0.5) * special.gamma(-H) / (math.sqrt(math.pi) * 2.0 ** (2 * H))
    assert limit == pytest.approx(1.8751, abs=1e-4)
    assert tempering_coefficient(H, 1e-4, 1.0) == pytest.approx(limit, rel=1e-5)


def test_variance_is_nondecreasing():
    """C_t² t^{2H} is nondecreasing on a grid of times."""
    values = [variance_function(0.3, 1.0, t) for t in np.linspace(0.0, 3.0, 61)]
    assert np.all(np.diff(values) >= 0.0)
    assert min(values) >= 0.0


def test_tempering_parameter_checks():
    """H outside (0, 1), λ <= 0 and negative times are domain errors."""
    with pytest.raises(DomainError):
        tempering_coefficient(1.2, 1.0, 1.0)
    with pytest.raises(DomainError):
        tempering_coefficient(0.3, 0.0, 1.0)
    with pytest.raises(DomainError):
        tempering_coefficient(0.3, 1.0, -0.5)
    with pytest.raises(DomainError):
        tfbm_covariance(0.3, 1.0, -0.1, 0.5)


def test_covariance_structure():
    """Cov is symmetric, Cov(t, t) = V(t), and Cov(0, t) = 0."""
    H, lam = 0.3, 1.0
    assert tfbm_covariance(H, lam, 0.25, 0.75) == pytest.approx(tfbm_covariance(H, lam, 0.75, 0.25), abs=0)
    assert tfbm_covariance(H, lam, 0.6, 0.6) == pytest.approx(variance_function(H, lam, 0.6), rel=1e-14)
    assert tfbm_covariance(H, lam, 0.0, 0.8) == 0.0
