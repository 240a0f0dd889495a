"""
Controlled paths (y, y', y'') over a signature table and the compensated rough integral.

Shapes: a controlled path with values in R^V stores y as (N, *V), y' as (N, *V, d)
and y'' as (N, *V, d, d), with

    y_{s,t}  = y'_s x_{s,t} + y''_s X²_{s,t} + R♯_{s,t}
    y'_{s,t} = y''_s x_{s,t} + R♯♯_{s,t}

where y''_s X² contracts y''[..., a, b] with X²[a, b] and y''_s x contracts the
first driver slot. Smooth fields g: R^e -> L(R^d, R^e) store g(y) as (e, d)
and Dg(y)[k, a, l] = ∂g_{k,a} / ∂y_l.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from errors import DomainError
from rough_norms import DEFAULT_P, holder_norm, p_variation, path_evaluator, two_param_variation

logger = logging.getLogger(__name__)

INTEGRAL_TOL = 1e-10


# -- smooth vector fields ---------------------------------------------------------

@dataclass(frozen=True)
class SmoothField:
    """g with derivatives up to order three and C_g bounding all of them."""

    name: str
    state_dim: int
    noise_dim: int
    g: Callable
    dg: Callable
    d2g: Callable
    d3g: Callable
    bound: float

    def check_bound(self, points):
        """Largest observed sup-norm of g and its derivatives on the given states."""
        worst = 0.0
        for y in np.atleast_2d(points):
            for fn in (self.g, self.dg, self.d2g, self.d3g):
                worst = max(worst, float(np.max(np.abs(fn(y)))))
        return worst


def constant_field(sigma):
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    e, d = sigma.shape
    return SmoothField(
        name="constant", state_dim=e, noise_dim=d,
        g=lambda y: sigma,
        dg=lambda y: np.zeros((e, d, e)),
        d2g=lambda y: np.zeros((e, d, e, e)),
        d3g=lambda y: np.zeros((e, d, e, e, e)),
        bound=float(np.max(np.abs(sigma))) if sigma.size else 0.0,
    )


def zero_field(e, d):
    return constant_field(np.zeros((e, d)))


def linear_field(matrix):
    """g(y)[k, a] = Σ_l A[k, a, l] y_l; unbounded, so C_g is infinite."""
    matrix = np.asarray(matrix, dtype=float)
    e, d, _ = matrix.shape
    return SmoothField(
        name="linear", state_dim=e, noise_dim=d,
        g=lambda y: matrix @ y,
        dg=lambda y: matrix,
        d2g=lambda y: np.zeros((e, d, e, e)),
        d3g=lambda y: np.zeros((e, d, e, e, e)),
        bound=math.inf,
    )


def linear_scalar_field(scale=1.0):
    return linear_field(np.full((1, 1, 1), float(scale)))


def sine_field(e, d, scale=1.0):
    """g(y)[k, a] = scale · sin(y_{(k+a) mod e} + a)."""
    target = np.array([[(k + a) % e for a in range(d)] for k in range(e)])
    phase = np.tile(np.arange(d, dtype=float), (e, 1))
    rows, cols = np.indices((e, d))

    def g(y):
        return scale * np.sin(y[target] + phase)

    def dg(y):
        out = np.zeros((e, d, e))
        out[rows, cols, target] = scale * np.cos(y[target] + phase)
        return out

    def d2g(y):
        out = np.zeros((e, d, e, e))
        out[rows, cols, target, target] = -scale * np.sin(y[target] + phase)
        return out

    def d3g(y):
        out = np.zeros((e, d, e, e, e))
        out[rows, cols, target, target, target] = -scale * np.cos(y[target] + phase)
        return out

    return SmoothField(name="sine", state_dim=e, noise_dim=d, g=g, dg=dg, d2g=d2g, d3g=d3g, bound=abs(scale))


def quadratic_field():
    """Scalar g(y) = y²."""
    return SmoothField(
        name="quadratic", state_dim=1, noise_dim=1,
        g=lambda y: np.array([[y[0] ** 2]]),
        dg=lambda y: np.array([[[2.0 * y[0]]]]),
        d2g=lambda y: np.full((1, 1, 1, 1), 2.0),
        d3g=lambda y: np.zeros((1, 1, 1, 1, 1)),
        bound=math.inf,
    )


FIELD_CATALOG = {
    "constant": lambda e, d, scale: constant_field(np.full((e, d), scale)),
    "linear": lambda e, d, scale: linear_field(scale * np.broadcast_to(np.eye(e)[:, None, :], (e, d, e)).copy()),
    "sine": lambda e, d, scale: sine_field(e, d, scale),
}


def catalog_field(name, e, d, scale=1.0):
    if name not in FIELD_CATALOG:
        raise DomainError(f"unknown field '{name}', choose from {sorted(FIELD_CATALOG)}")
    return FIELD_CATALOG[name](e, d, scale)


def second_derivative_term(field_, y):
    """(Dg g)(y) in y'' layout: out[k, a, b] = Σ_l Dg[k, b, l] g[l, a]."""
    return np.einsum("kbl,la->kab", field_.dg(y), field_.g(y))


# -- controlled paths ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ControlledPath:
    y: np.ndarray = field(repr=False)
    y_prime: np.ndarray = field(repr=False)
    y_second: np.ndarray = field(repr=False)
    table: object = field(repr=False)
    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.indices)
        d = self.table.dim
        value_shape = self.y.shape[1:]
        if self.y.shape[0] != n or self.y_prime.shape != (n, *value_shape, d) \
                or self.y_second.shape != (n, *value_shape, d, d):
            raise DomainError("controlled path arrays do not match the grid and driver dimension")

    @property
    def times(self):
        return self.table.times[self.indices]

    def position(self, t):
        idx = self.table.index_of(t)
        hits = np.flatnonzero(self.indices == idx)
        if hits.size == 0:
            raise DomainError(f"time {t} is not a point of the controlled path grid")
        return int(hits[0])

    def positions(self, interval):
        s, t = interval
        lo, hi = self.position(s), self.position(t)
        if lo >= hi:
            raise DomainError(f"empty interval [{s}, {t}]")
        return np.arange(lo, hi + 1)


def _contract_first(arr, x):
    # arr[..., a, b] x[a] -> [..., b], batched over the leading axis
    return np.einsum("k...ab,ka->k...b", arr, x)


def _remainder_arrays(cp, i, j):
    """Batched R♯ and R♯♯ over [i, j] for position array i and position j."""
    i = np.asarray(i)
    x1, x2, _ = cp.table.query_arrays(cp.indices[i], cp.indices[j])
    y_inc = cp.y[j] - cp.y[i]
    sharp = y_inc - np.einsum("k...a,ka->k...", cp.y_prime[i], x1) \
        - np.einsum("k...ab,kab->k...", cp.y_second[i], x2)
    sharp2 = (cp.y_prime[j] - cp.y_prime[i]) - _contract_first(cp.y_second[i], x1)
    return sharp, sharp2


def remainders(cp, s, t):
    """(R♯_{s,t}, R♯♯_{s,t}) at grid times s <= t."""
    i, j = cp.position(s), cp.position(t)
    if i > j:
        raise DomainError(f"remainders need s <= t, got s={s}, t={t}")
    sharp, sharp2 = _remainder_arrays(cp, np.array([i]), j)
    return sharp[0], sharp2[0]


def constant_controlled(value, table, indices):
    indices = np.asarray(indices)
    value = np.asarray(value, dtype=float)
    d = table.dim
    y = np.broadcast_to(value, (len(indices), *value.shape)).copy()
    return ControlledPath(y, np.zeros((*y.shape, d)), np.zeros((*y.shape, d, d)), table, indices)


def driver_controlled(table, indices):
    """(x_{s,·}, Id, 0) starting at the first grid point."""
    indices = np.asarray(indices)
    d = table.dim
    y = table.prefix1[indices] - table.prefix1[indices[0]]
    y_prime = np.broadcast_to(np.eye(d), (len(indices), d, d)).copy()
    return ControlledPath(y, y_prime, np.zeros((len(indices), d, d, d)), table, indices)


def second_level_controlled(table, indices):
    """(X²_{s,·}, y', y'') with y'[a, b, c] = x^a_{s,·} δ_{bc} and y''[a, b, c, e] = δ_{ac} δ_{be}."""
    indices = np.asarray(indices)
    d = table.dim
    start = np.full(len(indices), indices[0])
    x1, x2, _ = table.query_arrays(start, indices)
    y_prime = np.einsum("ka,bc->kabc", x1, np.eye(d))
    y_second = np.broadcast_to(np.einsum("ac,be->abce", np.eye(d), np.eye(d)), (len(indices), d, d, d, d)).copy()
    return ControlledPath(x2, y_prime, y_second, table, indices)


def solution_controlled(field_, y, table, indices):
    """(y, g(y), Dg(y) g(y)) for a path y solving dy = g(y) dx."""
    y = np.asarray(y, dtype=float)
    y_prime = np.stack([field_.g(v) for v in y])
    y_second = np.stack([second_derivative_term(field_, v) for v in y])
    return ControlledPath(y, y_prime, y_second, table, np.asarray(indices))


def compose_smooth(field_, cp):
    """Controlled triple of g(y): [g(y)]' = Dg y', [g(y)]'' = Dg y'' + D²g(y', y')."""
    z = np.stack([field_.g(v) for v in cp.y])
    dg = np.stack([field_.dg(v) for v in cp.y])
    d2g = np.stack([field_.d2g(v) for v in cp.y])
    z_prime = np.einsum("nkal,nlb->nkab", dg, cp.y_prime)
    z_second = (np.einsum("nkal,nlbc->nkabc", dg, cp.y_second)
                + np.einsum("nkalm,nlb,nmc->nkabc", d2g, cp.y_prime, cp.y_prime))
    return ControlledPath(z, z_prime, z_second, cp.table, cp.indices)


# -- compensated rough integral -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class RoughIntegral:
    value: np.ndarray = field(repr=False)
    cauchy_increment: float
    status: str  # "converged" or "not_converged"
    levels: int
    local_error: float
    certificate: float = math.nan
    constant: float = 1.0


def _compensated_sum(cp, positions):
    left, right = positions[:-1], positions[1:]
    x1, x2, x3 = cp.table.query_arrays(cp.indices[left], cp.indices[right])
    terms = (cp.y[left][..., None] * x1.reshape(len(left), *([1] * (cp.y.ndim - 1)), -1)
             + np.einsum("k...c,kce->k...e", cp.y_prime[left], x2)
             + np.einsum("k...bc,kbce->k...e", cp.y_second[left], x3))
    # fixed pairwise reduction keeps the result independent of worker layout
    while len(terms) > 1:
        if len(terms) % 2:
            terms = np.concatenate([terms[:-2], terms[-2:-1] + terms[-1:]])
        terms = terms[0::2] + terms[1::2]
    return terms[0]


def _dyadic_positions(cp, interval):
    positions = cp.positions(interval)
    count = len(positions) - 1
    if count & (count - 1):
        raise DomainError("rough integration needs an interval split into a power-of-two number of cells")
    return positions, int(round(math.log2(count)))


def compensated_sum(cp, interval, level):
    """Compensated sum over the partition of the interval into 2^level equal cells."""
    positions, finest = _dyadic_positions(cp, interval)
    if not 0 <= level <= finest:
        raise DomainError(f"partition level {level} is outside 0..{finest} for this interval")
    return _compensated_sum(cp, positions[:: 2 ** (finest - level)])


def rough_integral(cp, interval=None, tol=INTEGRAL_TOL, certify=False, constant=1.0, p=DEFAULT_P):
    """Compensated sums Σ (y_u ⊗ x_{u,v} + y'_u X²_{u,v} + y''_u X³_{u,v}) over dyadic refinements.

    Refines until two successive sums differ by less than tol relative to the
    latest one, or the controlled path grid is exhausted.
    """
    if interval is None:
        interval = (float(cp.times[0]), float(cp.times[-1]))
    positions, finest = _dyadic_positions(cp, interval)
    previous = _compensated_sum(cp, positions[[0, -1]])
    one_step = previous
    value, increment, status, used = previous, math.inf, "not_converged", 0
    for level in range(1, finest + 1):
        value = _compensated_sum(cp, positions[:: 2 ** (finest - level)])
        increment = float(np.max(np.abs(value - previous)))
        used = level
        if increment <= tol * max(1.0, float(np.max(np.abs(value)))):
            status = "converged"
            break
        previous = value
    if finest == 0:
        status, increment = "converged", 0.0
    if status != "converged":
        logger.warning(f"⚠️ Rough integral stopped at the finest grid with Cauchy increment {increment:.3e}")
    local_error = float(np.max(np.abs(value - one_step)))
    certificate = math.nan
    if certify:
        certificate = integral_certificate(cp, interval, p, constant)
    return RoughIntegral(value=value, cauchy_increment=increment, status=status, levels=used,
                         local_error=local_error, certificate=certificate, constant=constant)


def _remainder_evaluators(cp, offset):
    def sharp(i, j):
        return _remainder_arrays(cp, np.asarray(i) + offset, j + offset)[0]

    def sharp2(i, j):
        return _remainder_arrays(cp, np.asarray(i) + offset, j + offset)[1]

    return sharp, sharp2


def integral_certificate(cp, interval, p=DEFAULT_P, constant=1.0):
    """C_p (‖x‖_p ‖R♯‖_{p/3} + ‖X²‖_{p/2} ‖R♯♯‖_{p/2} + ‖y''‖_p ‖X³‖_{p/3}), modulo C_p."""
    positions = cp.positions(interval)
    grid = cp.times[positions]
    table_idx = cp.indices[positions]
    table = cp.table

    def level(j):
        return lambda a, b: table.query_arrays(table_idx[a], table_idx[b])[j]

    x_var = p_variation(level(0), grid, p)
    x2_var = two_param_variation(level(1), grid, p / 2.0)
    x3_var = two_param_variation(level(2), grid, p / 3.0)
    sharp, sharp2 = _remainder_evaluators(cp, positions[0])
    r_var = two_param_variation(sharp, grid, max(p / 3.0, 1.0))
    r2_var = two_param_variation(sharp2, grid, p / 2.0)
    second = cp.y_second[positions].reshape(len(positions), -1)
    y2_var = p_variation(path_evaluator(second), grid, p)
    return constant * (x_var * r_var + x2_var * r2_var + y2_var * x3_var)


def controlled_norm(cp, interval=None, p=DEFAULT_P):
    """‖y''‖_{p-var} + ‖R♯‖_{p/3-var} + ‖R♯♯‖_{p/2-var} over the controlled path grid."""
    if interval is None:
        interval = (float(cp.times[0]), float(cp.times[-1]))
    positions = cp.positions(interval)
    grid = cp.times[positions]
    second = cp.y_second[positions].reshape(len(positions), -1)
    sharp, sharp2 = _remainder_evaluators(cp, positions[0])
    return (p_variation(path_evaluator(second), grid, p)
            + two_param_variation(sharp, grid, max(p / 3.0, 1.0))
            + two_param_variation(sharp2, grid, p / 2.0))


def controlled_holder_norm(cp, interval=None, alpha=1.0 / DEFAULT_P):
    """‖y''‖_α + ‖R♯‖_{3α} + ‖R♯♯‖_{2α}; exponents above one are capped at one."""
    if interval is None:
        interval = (float(cp.times[0]), float(cp.times[-1]))
    positions = cp.positions(interval)
    grid = cp.times[positions]
    second = cp.y_second[positions].reshape(len(positions), -1)
    sharp, sharp2 = _remainder_evaluators(cp, positions[0])
    return (holder_norm(path_evaluator(second), grid, alpha)
            + holder_norm(sharp, grid, min(3.0 * alpha, 1.0))
            + holder_norm(sharp2, grid, min(2.0 * alpha, 1.0)))


def controlled_triple_norm(cp, interval=None, p=DEFAULT_P):
    """‖y‖_{p-var} + ‖R♯‖_{p/3-var} + ‖R♯♯‖_{p/2-var}, the seminorm the a priori bounds control."""
    if interval is None:
        interval = (float(cp.times[0]), float(cp.times[-1]))
    positions = cp.positions(interval)
    grid = cp.times[positions]
    values = cp.y[positions].reshape(len(positions), -1)
    sharp, sharp2 = _remainder_evaluators(cp, positions[0])
    return (p_variation(path_evaluator(values), grid, p)
            + two_param_variation(sharp, grid, max(p / 3.0, 1.0))
            + two_param_variation(sharp2, grid, p / 2.0))
