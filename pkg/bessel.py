"""
Modified Bessel function of the second kind and the TFBM variance coefficient.

K_v(z) is evaluated from its integral representation
``K_v(z) = ∫_0^∞ exp(-z cosh x) cosh(v x) dx`` by adaptive quadrature.
The tempering coefficient C_t² of a tempered fractional Brownian motion uses
it through the closed form

    C_t² = 2Γ(2H) / (2λt)^{2H} - 2Γ(H + 1/2) / (√π (2λt)^H) · K_H(λt)

so that Var(B_t) = C_t² t^{2H}.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

from scipy import integrate, optimize, special

from errors import DomainError, NumericError

logger = logging.getLogger(__name__)

MAX_ORDER = 4.0
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 400
# integrand is cut where it falls below this fraction of its peak
TRUNCATION_RATIO = 1e-18
SMALL_T = 1e-8

_LOG_TRUNCATION = math.log(TRUNCATION_RATIO)


@dataclass(frozen=True)
class BesselEval:
    order: float
    argument: float
    value: float
    method: str  # "quadrature" or "closed_form"


def _log_cosh(y):
    y = abs(y)
    return y + math.log1p(math.exp(-2.0 * y)) - math.log(2.0)


def _log_integrand(x, v, z):
    # log of exp(-z (cosh x - 1)) cosh(v x); the factor exp(-z) is applied outside
    return -z * (math.cosh(x) - 1.0) + _log_cosh(v * x)


def _truncation_point(v, z):
    """Return (peak location, upper limit) for the shifted integrand."""
    x_peak = math.asinh(abs(v) / z) if v != 0 else 0.0
    log_peak = max(_log_integrand(0.0, v, z), _log_integrand(x_peak, v, z))
    target = log_peak + _LOG_TRUNCATION

    def excess(x):
        return _log_integrand(x, v, z) - target

    x_hi = max(2.0 * x_peak, 1.0)
    while excess(x_hi) > 0.0:
        x_hi *= 2.0
        if x_hi > 512.0:
            raise NumericError("could not bracket the quadrature truncation point",
                               {"order": v, "argument": z})
    x_lo = x_peak if excess(x_peak) > 0.0 else 0.0
    x_max = optimize.brentq(excess, x_lo, x_hi, xtol=1e-12)
    return x_peak, x_max


@lru_cache(maxsize=65536)
def _bessel_k_quadrature(v, z):
    x_peak, x_max = _truncation_point(v, z)
    points = [x_peak] if 0.0 < x_peak < x_max else None
    out = integrate.quad(
        lambda x: math.exp(_log_integrand(x, v, z)),
        0.0, x_max,
        points=points,
        epsabs=0.0,
        epsrel=QUAD_EPSREL,
        limit=QUAD_LIMIT,
        full_output=1,
    )
    value, abserr, info = out[0], out[1], out[2]
    if len(out) > 3 and abserr > 1e-10 * abs(value):
        raise NumericError(
            "quadrature for K_v did not converge",
            {"order": v, "argument": z, "estimate": value, "abserr": abserr,
             "evaluations": info.get("neval"), "message": out[3]},
        )
    return math.exp(-z) * value


def _half_integer_index(v):
    n = abs(v) - 0.5
    k = round(n)
    if k < 0 or abs(n - k) > 1e-14:
        return None
    return int(k)


def bessel_k_closed_form(v, z):
    """Closed form of K_v(z) for half-integer orders.

    Starts from K_{1/2}(z) = K_{-1/2}(z) = sqrt(pi / (2z)) e^{-z} and walks up with
    K_{v+1} = K_{v-1} + (2v/z) K_v.
    """
    if z <= 0:
        raise DomainError(f"K_v needs a positive argument, got z={z}")
    k = _half_integer_index(v)
    if k is None:
        raise DomainError(f"closed form only exists for half-integer orders, got v={v}")
    prev = cur = math.sqrt(math.pi / (2.0 * z)) * math.exp(-z)
    order = 0.5
    for _ in range(k):
        prev, cur = cur, prev + (2.0 * order / z) * cur
        order += 1.0
    return cur


def bessel_eval(v, z, method="quadrature"):
    """Evaluate K_v(z) and return a BesselEval record."""
    if z <= 0:
        raise DomainError(f"K_v needs a positive argument, got z={z}")
    if abs(v) > MAX_ORDER:
        raise DomainError(f"order |v|={abs(v)} exceeds the supported {MAX_ORDER}")
    if method == "closed_form":
        value = bessel_k_closed_form(v, z)
    elif method == "quadrature":
        # K_{-v} = K_v, so the cache keys on |v|
        value = _bessel_k_quadrature(abs(float(v)), float(z))
    else:
        raise DomainError(f"unknown Bessel method '{method}'")
    return BesselEval(order=float(v), argument=float(z), value=value, method=method)


def bessel_k(v, z, method="quadrature"):
    """Modified Bessel function of the second kind K_v(z) for real v, z > 0."""
    return bessel_eval(v, z, method).value


def bessel_k_derivative_identity_residual(v, z, h):
    """|d/dz(z^v K_v(z)) + z^v K_{v-1}(z)| with the derivative taken by central differences."""
    if not z > h > 0:
        raise DomainError(f"need z > h > 0, got z={z}, h={h}")

    def scaled(x):
        return x ** v * bessel_k(v, x)

    derivative = (scaled(z + h) - scaled(z - h)) / (2.0 * h)
    return abs(derivative + z ** v * bessel_k(v - 1.0, z))


def bessel_k_recurrence_residual(v, z):
    """Relative residual of K_{v-1}(z) = K_{v+1}(z) - (2v/z) K_v(z)."""
    lower = bessel_k(v - 1.0, z)
    upper = bessel_k(v + 1.0, z)
    middle = bessel_k(v, z)
    return abs(lower - upper + (2.0 * v / z) * middle) / upper


def bessel_k_upper_bound(v, x):
    """Elementary upper bound for K_v(x).

    For 1/2 <= v < 3/2 it is sqrt(pi/2)(1 + 1/x)^v e^{-x} / sqrt(x + 1), and for
    0 < v < 1/2 it is 2^{v-1} Γ(v) (1 + 1/x)^v e^{-x} / sqrt(x + 1). At v = 1/2
    the bound is attained.
    """
    if x <= 0:
        raise DomainError(f"bound needs x > 0, got {x}")
    if 0.5 <= v < 1.5:
        prefactor = math.sqrt(math.pi / 2.0)
    elif 0.0 < v < 0.5:
        prefactor = 2.0 ** (v - 1.0) * special.gamma(v)
    else:
        raise DomainError(f"no elementary bound for order v={v}")
    return prefactor * (1.0 + 1.0 / x) ** v * math.exp(-x) / math.sqrt(x + 1.0)


def _check_tfbm_parameters(H, lam):
    if not 0.0 < H < 1.0:
        raise DomainError(f"Hurst index must lie in (0, 1), got H={H}")
    if not lam > 0.0:
        raise DomainError(f"tempering rate must be positive, got lambda={lam}")


def tempering_coefficient(H, lam, t):
    """C_t² from its closed form. Returns exactly 0 for t below SMALL_T."""
    _check_tfbm_parameters(H, lam)
    if t < 0:
        raise DomainError(f"time must be nonnegative, got t={t}")
    if t < SMALL_T:
        return 0.0
    c = lam * t
    # both terms diverge as t -> 0, so they are formed in log space
    log_first = math.log(2.0) + special.gammaln(2.0 * H) - 2.0 * H * math.log(2.0 * c)
    log_second = (math.log(2.0) + special.gammaln(H + 0.5) - 0.5 * math.log(math.pi)
                  - H * math.log(2.0 * c) + math.log(bessel_k(H, c)))
    value = math.fsum([math.exp(log_first), -math.exp(log_second)])
    return max(value, 0.0)


def tempering_coefficient_integral(H, lam, t):
    """C_t² from the integral representation; the slow reference evaluation.

    ∫_R [e^{-λt(1-x)_+}(1-x)_+^{-a} - e^{-λt(-x)_+}(-x)_+^{-a}]² dx with a = 1/2 - H.
    """
    _check_tfbm_parameters(H, lam)
    if t < 0:
        raise DomainError(f"time must be nonnegative, got t={t}")
    if t == 0:
        return 0.0
    a = 0.5 - H
    c = lam * t
    opts = dict(epsabs=0.0, epsrel=1e-11, limit=QUAD_LIMIT)

    # 0 <= x < 1: only the first kernel is alive; u = 1 - x
    inner, _ = integrate.quad(lambda u: math.exp(-2.0 * c * u), 0.0, 1.0,
                              weight="alg", wvar=(-2.0 * a, 0.0), **opts)

    # x < 0 with u = -x in (0, 1]: the square is expanded so the u^{-a} singularity sits in the
    # weight; its last term is the same integral as `inner`
    near_a, _ = integrate.quad(lambda u: math.exp(-2.0 * c * (1.0 + u)) * (1.0 + u) ** (-2.0 * a),
                               0.0, 1.0, **opts)
    near_b, _ = integrate.quad(lambda u: math.exp(-c * (1.0 + 2.0 * u)) * (1.0 + u) ** (-a),
                               0.0, 1.0, weight="alg", wvar=(-a, 0.0), **opts)

    def tail(u):
        diff = math.exp(-c * (1.0 + u)) * (1.0 + u) ** (-a) - math.exp(-c * u) * u ** (-a)
        return diff * diff

    split = max(10.0, 40.0 / c)
    far_a, _ = integrate.quad(tail, 1.0, split, **opts)
    far_b, _ = integrate.quad(tail, split, math.inf, **opts)
    return math.fsum([inner, near_a, -2.0 * near_b, inner, far_a, far_b])


def variance_function(H, lam, t):
    """Var(B_t) = C_t² t^{2H}."""
    if t < SMALL_T:
        _check_tfbm_parameters(H, lam)
        if t < 0:
            raise DomainError(f"time must be nonnegative, got t={t}")
        return 0.0
    return tempering_coefficient(H, lam, t) * t ** (2.0 * H)


def tfbm_covariance(H, lam, s, t):
    """Cov(B_s, B_t) = (V(t) + V(s) - V(|t - s|)) / 2 with V the variance function."""
    if s < 0 or t < 0:
        raise DomainError(f"covariance needs s, t >= 0, got s={s}, t={t}")
    return 0.5 * (variance_function(H, lam, t) + variance_function(H, lam, s)
                  - variance_function(H, lam, abs(t - s)))
