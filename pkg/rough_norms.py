"""
p-variation and Hölder norms on finite grids, the ρ_j dyadic metrics, and greedy
stopping-time sequences.

Every "variation" here is a grid-restricted supremum: partitions range over the
points of the grid handed in. Objects are given as evaluators

    evaluator(i, j) -> array of shape (len(i), ...)

returning the increment (or two-parameter value) over [grid[i], grid[j]] for an
index array ``i`` and a single index ``j``. Norms are Euclidean / Frobenius.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from errors import ContractError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_P = 3.5
DEFAULT_GAMMA_W = 3.0
DEFAULT_N_MAX = 8
# rough norms of a table range over the dyadic points of this level unless told otherwise
NORM_GRID_LEVEL = 8
MONOTONE_TOL = 1e-12


def _frobenius(values):
    flat = np.asarray(values).reshape(len(values), -1)
    return np.sqrt(np.einsum("ij,ij->i", flat, flat))


@dataclass(frozen=True, eq=False)
class VariationSpec:
    """Exponent and the finite point set partitions range over."""

    p: float
    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if not self.p > 1:
            raise DomainError(f"variation exponent must exceed 1, got p={self.p}")
        if grid.ndim != 1 or grid.size < 2:
            raise DomainError("a variation grid needs at least two points")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("variation grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)

    @property
    def interval(self):
        return float(self.grid[0]), float(self.grid[-1])


# -- dynamic programming over partitions -----------------------------------------

def _variation_profiles(norms, size, exponents, start=0):
    """best[c, j] = sup over partitions of [start, j] of Σ norm_c^{q_c}.

    ``norms(i, j)`` returns one norm array per component for index array i.
    """
    best = np.zeros((len(exponents), size - start))
    for j in range(start + 1, size):
        left = np.arange(start, j)
        values = norms(left, j)
        for c, q in enumerate(exponents):
            best[c, j - start] = np.max(best[c, : j - start] + values[c] ** q)
    return best


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise DomainError("variation over an empty grid")
    return grid


def p_variation(evaluator, grid, q):
    """(sup_partitions Σ ‖increment‖^q)^{1/q} over partitions with points in the grid."""
    grid = _check_grid(grid)
    if q < 1:
        raise DomainError(f"variation exponent must be at least 1, got q={q}")
    if grid.size == 1:
        return 0.0
    best = _variation_profiles(lambda i, j: (_frobenius(evaluator(i, j)),), grid.size, (q,))
    return float(best[0, -1] ** (1.0 / q))


def two_param_variation(evaluator, grid, q):
    """Variation of a two-parameter object X_{s,t} over consecutive partition points."""
    return p_variation(evaluator, grid, q)


def holder_norm(evaluator, grid, exponent):
    """max over grid pairs s < t of ‖·_{s,t}‖ / (t - s)^exponent."""
    grid = _check_grid(grid)
    if not 0 < exponent <= 1:
        raise DomainError(f"Hölder exponent must lie in (0, 1], got {exponent}")
    best = 0.0
    for j in range(1, grid.size):
        left = np.arange(j)
        ratios = _frobenius(evaluator(left, j)) / (grid[j] - grid[left]) ** exponent
        best = max(best, float(np.max(ratios)))
    return best


def path_evaluator(values):
    """Increment evaluator for a sampled path given as an (n, d) array."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return lambda i, j: values[j] - values[i]


# -- rough-path norms over signature tables ---------------------------------------

def table_grid(table, interval=None, level=None):
    """Table indices (and times) of the dyadic points of ``level`` inside the interval."""
    level = min(table.depth, NORM_GRID_LEVEL) if level is None else level
    step = table.stride(level)
    indices = np.arange(0, table.cells + 1, step)
    if interval is not None:
        s, t = interval
        lo, hi = table.index_of(s), table.index_of(t)
        if lo >= hi:
            raise DomainError(f"empty interval [{s}, {t}]")
        if lo % step or hi % step:
            raise DomainError(f"interval [{s}, {t}] is not resolved by the level-{level} grid")
        indices = indices[(indices >= lo) & (indices <= hi)]
    return indices, table.times[indices]


def table_level_evaluator(table, indices, level):
    """Evaluator of level ``level`` (1, 2 or 3) of the table on the given grid indices."""
    indices = np.asarray(indices)

    def evaluate(i, j):
        return table.query_arrays(indices[i], indices[j])[level - 1]

    return evaluate


def _table_norms(table, indices):
    indices = np.asarray(indices)

    def norms(i, j):
        x1, x2, x3 = table.query_arrays(indices[i], indices[j])
        return _frobenius(x1), _frobenius(x2), _frobenius(x3)

    return norms


def rough_pvar_norm(table, interval=None, p=DEFAULT_P, level=None):
    """(‖x‖^p_{p} + ‖X²‖^{p/2}_{p/2} + ‖X³‖^{p/3}_{p/3})^{1/p}, each variation by its own DP."""
    indices, times = table_grid(table, interval, level)
    spec = VariationSpec(p, times)
    best = _variation_profiles(_table_norms(table, indices), times.size,
                               (spec.p, spec.p / 2.0, spec.p / 3.0))
    return float(math.fsum(best[:, -1]) ** (1.0 / spec.p))


def rough_holder_norm(table, interval=None, alpha=1.0 / DEFAULT_P, level=None):
    """‖x‖_α + ‖X²‖_{2α} + ‖X³‖_{3α} over the grid pairs of the interval."""
    indices, times = table_grid(table, interval, level)
    return _rough_holder_profile(table, indices, times, alpha, 0)[-1]


def _rough_holder_profile(table, indices, times, alpha, start):
    """Rough Hölder norm over [times[start], times[j]] for every j >= start."""
    size = times.size
    running = np.zeros(3)
    out = np.zeros(size - start)
    norms = _table_norms(table, indices)
    for j in range(start + 1, size):
        left = np.arange(start, j)
        gaps = times[j] - times[left]
        for c, values in enumerate(norms(left, j)):
            running[c] = max(running[c], float(np.max(values / gaps ** ((c + 1) * alpha))))
        out[j - start] = running.sum()
    return out


class RoughPVarControl:
    """ω(s, t) = ‖𝐱‖_{p-var,[s,t]} on grid positions, with per-start profiles cached."""

    def __init__(self, table, p=DEFAULT_P, level=None, interval=None):
        self.table = table
        self.p = p
        self.indices, self.times = table_grid(table, interval, level)
        self._norms = _table_norms(table, self.indices)
        self._profiles = {}

    def profile(self, start):
        if start not in self._profiles:
            best = _variation_profiles(self._norms, self.times.size, (self.p, self.p / 2.0, self.p / 3.0), start)
            self._profiles[start] = best.sum(axis=0) ** (1.0 / self.p)
        return self._profiles[start]

    def __call__(self, i, j):
        if j < i:
            raise DomainError(f"control needs i <= j, got ({i}, {j})")
        return float(self.profile(i)[j - i])


class RoughHolderControl:
    """(t - s)^{1-2α} + ‖𝐱‖_{α-Hol,[s,t]} on grid positions."""

    def __init__(self, table, alpha, level=None, interval=None):
        self.table = table
        self.alpha = alpha
        self.indices, self.times = table_grid(table, interval, level)
        self._profiles = {}

    def profile(self, start):
        if start not in self._profiles:
            rough = _rough_holder_profile(self.table, self.indices, self.times, self.alpha, start)
            self._profiles[start] = (self.times[start:] - self.times[start]) ** (1.0 - 2.0 * self.alpha) + rough
        return self._profiles[start]

    def __call__(self, i, j):
        return float(self.profile(i)[j - i])


# -- ρ_j metrics and the d_p proxy -------------------------------------------------

@dataclass(frozen=True)
class RhoMetrics:
    rho1: float
    rho2: float
    rho3: float
    n_max: int
    gamma_w: float
    p: float

    def as_tuple(self):
        return self.rho1, self.rho2, self.rho3


def rho_j(table_x, table_y=None, j=1, p=DEFAULT_P, gamma_w=DEFAULT_GAMMA_W, n_max=DEFAULT_N_MAX):
    """(Σ_{n=1}^{n_max} n^{γ_w} Σ_k ‖X^j_{n,k} - Y^j_{n,k}‖^{p/j})^{j/p}; Y = 0 when omitted."""
    if j not in (1, 2, 3):
        raise DomainError(f"rho_j is defined for j in {{1, 2, 3}}, got j={j}")
    if table_x.depth < n_max or (table_y is not None and table_y.depth < n_max):
        raise DomainError(f"tables must reach depth n_max={n_max}")
    if table_y is not None and (table_y.dim != table_x.dim or table_y.horizon != table_x.horizon):
        raise DomainError("rho_j compares tables over the same horizon and dimension")
    terms = []
    for n in range(1, n_max + 1):
        diff = table_x.level_arrays(n)[j - 1]
        if table_y is not None:
            diff = diff - table_y.level_arrays(n)[j - 1]
        terms.append(n ** gamma_w * math.fsum(_frobenius(diff) ** (p / j)))
    return math.fsum(terms) ** (j / p)


def rho_metrics(table_x, table_y=None, p=DEFAULT_P, gamma_w=DEFAULT_GAMMA_W, n_max=DEFAULT_N_MAX):
    values = [rho_j(table_x, table_y, j, p, gamma_w, n_max) for j in (1, 2, 3)]
    return RhoMetrics(*values, n_max=n_max, gamma_w=gamma_w, p=p)


def dp_proxy_terms(table_x, table_y, p=DEFAULT_P, gamma_w=DEFAULT_GAMMA_W, n_max=DEFAULT_N_MAX):
    """The six quantities whose maximum is I(X, Y)."""
    cross = rho_metrics(table_x, table_y, p, gamma_w, n_max)
    own_x = rho_metrics(table_x, None, p, gamma_w, n_max)
    own_y = rho_metrics(table_y, None, p, gamma_w, n_max)
    first = own_x.rho1 + own_y.rho1
    second = own_x.rho2 + own_y.rho2
    return [cross.rho1, cross.rho2, cross.rho3,
            cross.rho1 * first, cross.rho2 * first, cross.rho1 * second]


def dp_proxy(table_x, table_y, p=DEFAULT_P, gamma_w=DEFAULT_GAMMA_W, n_max=DEFAULT_N_MAX):
    """I(X, Y): a computable quantity dominating d_p up to a constant factor."""
    return max(dp_proxy_terms(table_x, table_y, p, gamma_w, n_max))


# -- greedy stopping times ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GreedySequence:
    times: np.ndarray = field(repr=False)
    positions: np.ndarray = field(repr=False)
    controls: np.ndarray = field(repr=False)
    gamma: float
    exponent: float
    bound: float = math.inf

    @property
    def count(self):
        return len(self.times) - 1


def _first_crossing(control, start, end, gamma):
    """Smallest position j in (start, end] with control(start, j) >= gamma, else end."""
    lo, lo_value = start, control(start, start)
    if abs(lo_value) > MONOTONE_TOL:
        raise ContractError(f"control must vanish on degenerate intervals, got {lo_value}")
    step = 1
    hi = None
    # gallop to bracket the crossing
    while True:
        pos = min(start + step, end)
        value = control(start, pos)
        if value < lo_value - MONOTONE_TOL:
            raise ContractError(f"control decreased from {lo_value} to {value} at position {pos}")
        if value >= gamma:
            hi = pos
            break
        lo, lo_value = pos, value
        if pos == end:
            return end, value
        step *= 2
    hi_value = control(start, hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        value = control(start, mid)
        if value < lo_value - MONOTONE_TOL or value > hi_value + MONOTONE_TOL:
            raise ContractError(f"control is not monotone around position {mid}")
        if value >= gamma:
            hi, hi_value = mid, value
        else:
            lo, lo_value = mid, value
    return hi, hi_value


def _greedy(control, gamma, grid, exponent, bound):
    if not gamma > 0:
        raise DomainError(f"greedy threshold must be positive, got gamma={gamma}")
    grid = _check_grid(grid)
    end = grid.size - 1
    positions, controls = [0], []
    while positions[-1] < end:
        nxt, value = _first_crossing(control, positions[-1], end, gamma)
        positions.append(nxt)
        controls.append(value)
    positions = np.array(positions)
    seq = GreedySequence(times=grid[positions], positions=positions, controls=np.array(controls),
                         gamma=gamma, exponent=exponent, bound=bound)
    if seq.count > bound * (1 + 1e-12):
        raise ContractError(f"greedy count {seq.count} exceeds its bound {bound}")
    return seq


def greedy_count_bound(gamma, p, norm):
    """1 + γ^{-p} ‖𝐱‖^p_{p-var,I}."""
    return 1.0 + gamma ** (-p) * norm ** p


def holder_count_bound(gamma, length, alpha, nu, nu_norm):
    """1 + |I| γ^{-1/(ν-α)} (1 + ‖𝐱‖_{ν-Hol,I}^{1/(ν-α)})."""
    q = 1.0 / (nu - alpha)
    # evaluated in log space: the exponent q is large when α and ν are close
    with np.errstate(over="ignore"):
        return float(1.0 + length * np.exp(-q * np.log(gamma)) * (1.0 + np.exp(q * np.log(max(nu_norm, 1e-300)))))


def greedy_times(control, gamma, grid, p=None):
    """Greedy partition τ_{i+1} = first grid point where control(τ_i, ·) reaches γ.

    ``control(i, j)`` works on grid positions and must be nondecreasing in j with
    control(i, i) = 0. When ``p`` is given, control is read as a p-variation norm
    and the count is checked against 1 + γ^{-p} control(I)^p.
    """
    grid = _check_grid(grid)
    bound = math.inf
    if p is not None:
        bound = greedy_count_bound(gamma, p, control(0, grid.size - 1))
    return _greedy(control, gamma, grid, p if p is not None else math.nan, bound)


def greedy_times_pvar(table, gamma, p=DEFAULT_P, interval=None, level=None):
    """Greedy times for the rough p-variation control of a signature table."""
    control = RoughPVarControl(table, p, level, interval)
    return greedy_times(control, gamma, control.times, p=p)


def greedy_times_holder(table, gamma, interval=None, alpha=0.27, nu=0.29, level=None):
    """Greedy times for (t - τ)^{1-2α} + ‖𝐱‖_{α-Hol,[τ,t]}, checked against the Hölder count bound."""
    if not 0.25 < alpha < nu < 0.5:
        raise DomainError(f"need 1/4 < alpha < nu < 1/2, got alpha={alpha}, nu={nu}")
    control = RoughHolderControl(table, alpha, level, interval)
    indices, times = control.indices, control.times
    nu_norm = _rough_holder_profile(table, indices, times, nu, 0)[-1]
    bound = holder_count_bound(gamma, times[-1] - times[0], alpha, nu, nu_norm)
    return _greedy(control, gamma, times, alpha, bound)
