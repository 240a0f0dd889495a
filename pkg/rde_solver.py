"""
Rough differential equations dy = f(y) dt + g(y) dx driven by a signature table.

All solvers share one third-order step. Over [u, v] with signature (x, X², X³):

    y_v = y_u + g(y_u) x + (Dg g)(y_u) X² + [Dg Dg g + D²g(g, g)](y_u) X³

The drifted equation is solved either by adding f(y_u)(v - u) to every step
("direct") or by the Doss-Sussmann transformation restarted on every driver
segment ("doss_sussmann"). Jacobians come from the same step applied to the
variational system (y, ξ) with dξ = Dg(y) ξ dx.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from controlled_paths import SmoothField, controlled_triple_norm, solution_controlled
from errors import DivergenceError, DomainError, NumericError
from rough_norms import DEFAULT_P, NORM_GRID_LEVEL, greedy_count_bound, greedy_times_pvar, rough_pvar_norm
from rough_tensor import _inverse_arrays, _segment_arrays

logger = logging.getLogger(__name__)

DIVERGENCE_CAP = 1e8
CONDITION_CAP = 1e12
DEFAULT_C_P = 1.0
DEFAULT_M = 1
METHODS = ("direct", "doss_sussmann")


# -- problem description ---------------------------------------------------------------

@dataclass(frozen=True)
class StepSpec:
    """How the step grid is built.

    ``level`` picks the uniform dyadic steps (default: the driver's knots). Each
    step is split into ``substeps`` equal parts, which needs every step to lie on
    one linear piece of the driver. With ``greedy_gamma`` the greedy stopping
    times of the rough p-variation control are merged into the grid.
    """

    level: Optional[int] = None
    substeps: int = 1
    greedy_gamma: Optional[float] = None
    p: float = DEFAULT_P

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise DomainError(f"substeps must be a positive integer, got {self.substeps}")
        if self.greedy_gamma is not None and not self.greedy_gamma > 0:
            raise DomainError(f"greedy threshold must be positive, got {self.greedy_gamma}")


@dataclass(frozen=True, eq=False)
class RDEProblem:
    diffusion: SmoothField
    y_a: np.ndarray
    table: object = field(repr=False)
    interval: Optional[tuple] = None
    drift: Optional[Callable] = None
    drift_lipschitz: float = 0.0

    def __post_init__(self):
        y_a = np.atleast_1d(np.asarray(self.y_a, dtype=float)).copy()
        object.__setattr__(self, "y_a", y_a)
        if y_a.shape != (self.diffusion.state_dim,):
            raise DomainError(f"initial value has shape {y_a.shape}, the field expects ({self.diffusion.state_dim},)")
        if self.diffusion.noise_dim != self.table.dim:
            raise DomainError(f"field takes {self.diffusion.noise_dim} driver components, table has {self.table.dim}")
        interval = self.interval if self.interval is not None else (0.0, self.table.horizon)
        a, b = float(interval[0]), float(interval[1])
        if self.table.index_of(a) >= self.table.index_of(b):
            raise DomainError(f"empty interval [{a}, {b}]")
        object.__setattr__(self, "interval", (a, b))
        if not 0.0 <= self.drift_lipschitz < math.inf:
            raise DomainError(f"drift Lipschitz constant must be finite and nonnegative, got {self.drift_lipschitz}")

    @property
    def state_dim(self):
        return self.diffusion.state_dim


@dataclass(frozen=True, eq=False)
class RDESolution:
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    method: str
    substeps: int = 1
    jacobians: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def final(self):
        return self.values[-1]

    def at(self, t):
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise DomainError(f"time {t} is not on the step grid")
        return self.values[hits[0]]


# -- step grid -----------------------------------------------------------------------------

def step_indices(table, interval, step=StepSpec()):
    """Table indices of the step grid over the interval."""
    a, b = interval
    lo, hi = table.index_of(a), table.index_of(b)
    level = table.path_level if step.level is None else step.level
    stride = table.stride(level)
    if lo % stride or hi % stride:
        raise DomainError(f"interval [{a}, {b}] is not resolved by level-{level} steps")
    points = np.arange(lo, hi + 1, stride)
    if step.greedy_gamma is not None:
        seq = greedy_times_pvar(table, step.greedy_gamma, step.p, interval=(a, b), level=min(level, NORM_GRID_LEVEL))
        points = np.union1d(points, [table.index_of(t) for t in seq.times])
        logger.debug(f"Greedy step grid: {seq.count} stopping intervals merged into {points.size - 1} steps")
    return points


def _require_linear(table, indices):
    piece = table.stride(table.path_level)
    left, right = indices[:-1], indices[1:]
    if np.any(left // piece != (right - 1) // piece):
        raise DomainError("every step must lie on a single linear piece of the driver")


def _step_plan(table, indices, substeps):
    """Durations and signature levels of the (sub)steps, one row per step."""
    x1, x2, x3 = table.query_arrays(indices[:-1], indices[1:])
    h = np.diff(table.times[indices])
    if substeps > 1:
        _require_linear(table, indices)
        x1, x2, x3 = _segment_arrays(x1 / substeps)
        h = h / substeps
    return h, x1, x2, x3


# -- the third-order step ------------------------------------------------------------------

def taylor_increment(G, DG, D2G, x1, x2, x3):
    """g x + (Dg g) X² + [Dg Dg g + D²g(g, g)] X³ from the field jets at the step start."""
    ypp = np.einsum("kbl,la->kab", DG, G)
    w = np.einsum("kcl,lab->kabc", DG, ypp) + np.einsum("kclm,la,mb->kabc", D2G, G, G)
    return G @ x1 + np.einsum("kab,ab->k", ypp, x2) + np.einsum("kabc,abc->k", w, x3)


def _field_jets(field_):
    return lambda y: (field_.g(y), field_.dg(y), field_.d2g(y))


def _variational_jets(field_):
    """Jets of the field (y, ξ) ↦ (g(y), Dg(y) ξ) with ξ flattened row-major after y."""
    e, d = field_.state_dim, field_.noise_dim
    n = e + e * e
    eye = np.eye(e)

    def jets(state):
        y, xi = state[:e], state[e:].reshape(e, e)
        g, dg, d2g, d3g = field_.g(y), field_.dg(y), field_.d2g(y), field_.d3g(y)
        G = np.empty((n, d))
        G[:e] = g
        G[e:] = np.einsum("ial,lj->ija", dg, xi).reshape(e * e, d)
        DG = np.zeros((n, d, n))
        DG[:e, :, :e] = dg
        DG[e:, :, :e] = np.einsum("ialm,lj->ijam", d2g, xi).reshape(e * e, d, e)
        DG[e:, :, e:] = np.einsum("iap,jq->ijapq", dg, eye).reshape(e * e, d, e * e)
        D2G = np.zeros((n, d, n, n))
        D2G[:e, :, :e, :e] = d2g
        D2G[e:, :, :e, :e] = np.einsum("ialmr,lj->ijamr", d3g, xi).reshape(e * e, d, e, e)
        mixed = np.einsum("iapm,jq->ijampq", d2g, eye).reshape(e * e, d, e, e * e)
        D2G[e:, :, :e, e:] = mixed
        D2G[e:, :, e:, :e] = mixed.transpose(0, 1, 3, 2)
        return G, DG, D2G

    return jets


def _guard(y, t, cap):
    norm = float(np.linalg.norm(y))
    if not norm <= cap:
        raise DivergenceError("solution left the divergence cap", {"time": t, "norm": norm, "cap": cap})


def _march(jets, start, plan, substeps, times, drift=None, cap=DIVERGENCE_CAP, backward=False):
    h, x1, x2, x3 = plan
    if backward:
        x1, x2, x3 = _inverse_arrays(x1, x2, x3)
    steps = len(h)
    out = np.empty((steps + 1, start.size))
    y = start.copy()
    order = range(steps - 1, -1, -1) if backward else range(steps)
    out[-1 if backward else 0] = y
    for k in order:
        for _ in range(substeps):
            inc = taylor_increment(*jets(y), x1[k], x2[k], x3[k])
            if drift is not None:
                y = y + drift(y) * h[k] + inc
            else:
                y = y + inc
        slot = k if backward else k + 1
        _guard(y, float(times[slot]), cap)
        out[slot] = y
    return out


# -- solvers -------------------------------------------------------------------------------

def solve_pure_rde(g, table, y_a, interval=None, step=StepSpec(), cap=DIVERGENCE_CAP):
    """Solve dy = g(y) dx on the step grid."""
    problem = RDEProblem(g, y_a, table, interval)
    indices = step_indices(table, problem.interval, step)
    times = table.times[indices]
    values = _march(_field_jets(g), problem.y_a, _step_plan(table, indices, step.substeps),
                    step.substeps, times, cap=cap)
    return RDESolution(times, values, indices, "pure", step.substeps)


def _doss_sussmann(problem, indices, step, cap):
    """Doss-Sussmann restarted at every segment start.

    On a segment of length h with increment x the transformed drift
    F(θ, w) = J_θ(w)^{-1} f(φ_θ(w)) is integrated by RK4, where φ_θ is the pure
    one-step flow over the first fraction θ of the segment and J_θ its Jacobian.
    """
    table, g = problem.table, problem.diffusion
    drift = problem.drift if problem.drift is not None else (lambda y: np.zeros_like(y))
    _require_linear(table, indices)
    x1, _, _ = table.query_arrays(indices[:-1], indices[1:])
    h = np.diff(table.times[indices]) / step.substeps
    x1 = x1 / step.substeps
    times = table.times[indices]
    e = problem.state_dim
    eye_flat = np.eye(e).reshape(-1)
    field_jets, var_jets = _field_jets(g), _variational_jets(g)

    def transformed(levels, w, t):
        state = np.concatenate([w, eye_flat])
        moved = state + taylor_increment(*var_jets(state), *levels)
        jac = moved[e:].reshape(e, e)
        cond = float(np.linalg.cond(jac))
        if not cond <= CONDITION_CAP:
            raise NumericError("Jacobian of the pure flow is ill-conditioned",
                               {"time": t, "condition": cond, "cap": CONDITION_CAP})
        return np.linalg.solve(jac, drift(moved[:e]))

    out = np.empty((len(indices), e))
    out[0] = y = problem.y_a.copy()
    for k in range(len(indices) - 1):
        half, full = _segment_arrays(0.5 * x1[k]), _segment_arrays(x1[k])
        dt = h[k]
        for _ in range(step.substeps):
            k1 = drift(y)
            k2 = transformed(half, y + 0.5 * dt * k1, times[k])
            k3 = transformed(half, y + 0.5 * dt * k2, times[k])
            k4 = transformed(full, y + dt * k3, times[k])
            w = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            y = w + taylor_increment(*field_jets(w), *full)
        _guard(y, float(times[k + 1]), cap)
        out[k + 1] = y
    return out


def solve_rde_with_drift(problem, method="direct", step=StepSpec(), cap=DIVERGENCE_CAP):
    """Solve dy = f(y) dt + g(y) dx by the direct scheme or by Doss-Sussmann."""
    if method not in METHODS:
        raise DomainError(f"unknown method '{method}', expected one of {METHODS}")
    table = problem.table
    indices = step_indices(table, problem.interval, step)
    times = table.times[indices]
    if method == "direct":
        values = _march(_field_jets(problem.diffusion), problem.y_a, _step_plan(table, indices, step.substeps),
                        step.substeps, times, drift=problem.drift, cap=cap)
    else:
        values = _doss_sussmann(problem, indices, step, cap)
    return RDESolution(times, values, indices, method, step.substeps)


def _variational_solution(g, table, start_y, interval, step, cap, backward):
    e = g.state_dim
    indices = step_indices(table, interval, step)
    times = table.times[indices]
    start = np.concatenate([start_y, np.eye(e).reshape(-1)])
    states = _march(_variational_jets(g), start, _step_plan(table, indices, step.substeps),
                    step.substeps, times, cap=cap, backward=backward)
    return RDESolution(times, states[:, :e], indices, "backward" if backward else "pure", step.substeps,
                       jacobians=states[:, e:].reshape(-1, e, e))


def jacobian_flow(problem, y_a=None, step=StepSpec(), cap=DIVERGENCE_CAP):
    """∂y_t/∂y_a along the pure flow; ``jacobians[0]`` is the identity."""
    if problem.drift is not None:
        raise DomainError("jacobian_flow linearizes the pure equation; the problem carries a drift")
    start = problem.y_a if y_a is None else np.atleast_1d(np.asarray(y_a, dtype=float))
    return _variational_solution(problem.diffusion, problem.table, start, problem.interval, step, cap, False)


def solve_backward_rde(g, table, h_b, interval=None, step=StepSpec(), cap=DIVERGENCE_CAP):
    """Solve h_t = h_b - ∫_t^b g(h_u) dx_u backwards from the terminal value h_b."""
    problem = RDEProblem(g, h_b, table, interval)
    indices = step_indices(table, problem.interval, step)
    times = table.times[indices]
    values = _march(_field_jets(g), problem.y_a, _step_plan(table, indices, step.substeps),
                    step.substeps, times, cap=cap, backward=True)
    return RDESolution(times, values, indices, "backward", step.substeps)


def backward_jacobian(g, table, h_b, interval=None, step=StepSpec(), cap=DIVERGENCE_CAP):
    """∂h_t/∂h_b along the backward flow; ``jacobians[-1]`` is the identity."""
    problem = RDEProblem(g, h_b, table, interval)
    return _variational_solution(g, table, problem.y_a, problem.interval, step, cap, True)


def solution_pvar_triple(solution, g, table, p=DEFAULT_P, interval=None):
    """Realized ‖y‖_{p-var} + ‖R♯‖_{p/3-var} + ‖R♯♯‖_{p/2-var} of (y, g(y), Dg(y) g(y))."""
    cp = solution_controlled(g, solution.values, table, solution.indices)
    return controlled_triple_norm(cp, interval, p)


# -- a priori bounds -----------------------------------------------------------------------

@dataclass(frozen=True)
class AprioriReport:
    status: str
    p: float
    c_p: float
    m_constant: int
    c_g: float
    c_f: float
    interval: tuple
    initial_norm: float
    driver_norm: float
    theta1: float
    theta: Optional[float] = None
    radius: Optional[float] = None
    greedy_count: Optional[int] = None
    count_bound: Optional[float] = None
    sup_bound: Optional[float] = None
    sup_bound_closed: Optional[float] = None
    triple_bound: Optional[float] = None
    theta3: Optional[float] = None
    continuity_radius: Optional[float] = None
    continuity_count: Optional[int] = None
    continuity_count_bound: Optional[float] = None
    notes: tuple = ()

    @property
    def contraction_log2(self):
        return self.continuity_count

    @property
    def contraction_factor(self):
        if self.continuity_count is None:
            return None
        return math.inf if self.continuity_count > 1000 else 2.0 ** self.continuity_count

    def as_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, (np.floating, np.integer)):
                value = value.item()
            out[name] = value
        out["contraction_factor"] = self.contraction_factor
        return out


def theta1_value(c_g, c_p, length, p):
    """C_p[2C + (5 + 2|I|^{2/p})C² + 17C³ + 5C⁴] + 2C + 3C² + 5C³."""
    c = c_g
    return (c_p * (2 * c + (5 + 2 * length ** (2.0 / p)) * c ** 2 + 17 * c ** 3 + 5 * c ** 4)
            + 2 * c + 3 * c ** 2 + 5 * c ** 3)


def theta3_value(c_g, c_p, m_constant, length, p, triple):
    """M C_p[C + (1 + |I|^{2/p})C² + C³ + C⁴](1 + 2S + S²) with S the a priori triple bound."""
    c = c_g
    return (m_constant * c_p * (c + (1 + length ** (2.0 / p)) * c ** 2 + c ** 3 + c ** 4)
            * (1.0 + 2.0 * triple + triple ** 2))


def solution_radius(theta1):
    """min{1/(2Θ₁) - 1, (1/(2Θ₁) - 1)^{1/3}}, or None when no radius is admissible."""
    if not theta1 > 0 or theta1 >= 0.5:
        return None
    c = 1.0 / (2.0 * theta1) - 1.0
    return min(c, c ** (1.0 / 3.0))


def continuity_radius(theta3):
    c = 1.0 / (12.0 * theta3)
    return min(c, c ** (1.0 / 3.0))


def apriori_report(problem, c_p=DEFAULT_C_P, m_constant=DEFAULT_M, p=DEFAULT_P, level=None):
    """Evaluate the a priori solution and continuity bounds for a problem.

    Θ₃ depends on the solution seminorms over the interval; the triple bound is
    substituted for both solutions. Bounds are modulo C_p and the continuity
    bound is parametric in M.
    """
    table, (a, b) = problem.table, problem.interval
    c_g = float(problem.diffusion.bound)
    length = b - a
    driver_norm = rough_pvar_norm(table, (a, b), p, level)
    initial_norm = float(np.linalg.norm(problem.y_a))
    theta1 = theta1_value(c_g, c_p, length, p)
    base = dict(p=p, c_p=c_p, m_constant=m_constant, c_g=c_g, c_f=float(problem.drift_lipschitz),
                interval=(a, b), initial_norm=initial_norm, driver_norm=driver_norm, theta1=theta1)
    notes = ["bounds are modulo C_p", f"continuity bound is parametric in M (M={m_constant})",
             "Theta3 uses the a priori triple bound for both solutions"]
    radius = solution_radius(theta1) if math.isfinite(theta1) else None
    if radius is None:
        logger.warning(f"⚠️ A priori bound vacuous: Theta1={theta1:.4g} admits no greedy radius")
        return AprioriReport(status="vacuous", notes=tuple(notes + ["Theta1 >= 1/2: no admissible radius"]), **base)

    nu = min(driver_norm, radius)
    theta = theta1 * (1.0 + max(nu, nu ** 2, nu ** 3))
    ratio = theta / (1.0 - theta)
    count = greedy_times_pvar(table, radius, p, (a, b), level).count
    triple = ratio * 2.0 ** ((p - 1.0) / p) * (1.0 + radius ** (1.0 - 2.0 * p) * driver_norm ** (2.0 * p - 1.0))
    theta3 = theta3_value(c_g, c_p, m_constant, length, p, triple)
    radius3 = continuity_radius(theta3)
    count3 = greedy_times_pvar(table, radius3, p, (a, b), level).count
    report = AprioriReport(
        status="ok", theta=theta, radius=radius, greedy_count=count,
        count_bound=greedy_count_bound(radius, p, driver_norm),
        sup_bound=initial_norm + ratio * count,
        sup_bound_closed=initial_norm + ratio * greedy_count_bound(radius, p, driver_norm),
        triple_bound=triple, theta3=theta3, continuity_radius=radius3, continuity_count=count3,
        continuity_count_bound=greedy_count_bound(radius3, p, driver_norm), notes=tuple(notes), **base)
    logger.debug(f"A priori report: Theta1={theta1:.4g}, N={count}, N_bar={count3}")
    return report
