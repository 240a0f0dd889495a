"""
Level-3 truncated tensor algebra and exact signatures of piecewise-linear paths.

A signature over [s, t] is the triple (x, X², X³) of iterated integrals. Tables of
signatures over dyadic intervals are built from prefix signatures S_{0,t} and the
query S_{s,t} = S_{0,s}^{-1} ⊗ S_{0,t}, which keeps construction linear in the grid
size instead of re-lifting every interval.
"""

import logging
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from errors import DomainError
from tfbm_sampler import restrict

logger = logging.getLogger(__name__)

ALGEBRA_TOL = 1e-12
MAX_TABLE_DEPTH = 12


# -- batched tensor operations (leading axes broadcast) ---------------------------

def _outer2(a, b):
    return a[..., :, None] * b[..., None, :]


def _outer3(a, b, c):
    return a[..., :, None, None] * b[..., None, :, None] * c[..., None, None, :]


def _concat_arrays(a1, a2, a3, b1, b2, b3):
    c1 = a1 + b1
    c2 = a2 + b2 + _outer2(a1, b1)
    c3 = a3 + b3 + a2[..., :, :, None] * b1[..., None, None, :] + a1[..., :, None, None] * b2[..., None, :, :]
    return c1, c2, c3


def _inverse_arrays(x1, x2, x3):
    y1 = -x1
    y2 = -x2 + _outer2(x1, x1)
    y3 = (-x3 + x1[..., :, None, None] * x2[..., None, :, :]
          + x2[..., :, :, None] * x1[..., None, None, :] - _outer3(x1, x1, x1))
    return y1, y2, y3


def _segment_arrays(delta):
    return delta, 0.5 * _outer2(delta, delta), _outer3(delta, delta, delta) / 6.0


# -- signatures ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TruncatedSignature:
    """Levels one to three of a path's iterated integrals over [s, t]."""

    level1: np.ndarray = field(repr=False)
    level2: np.ndarray = field(repr=False)
    level3: np.ndarray = field(repr=False)
    s: float = None
    t: float = None

    @property
    def dim(self):
        return self.level1.shape[-1]

    def levels(self):
        return self.level1, self.level2, self.level3

    def distance(self, other):
        """Largest absolute entry difference over the three levels."""
        if self.dim != other.dim:
            raise DomainError(f"cannot compare signatures of dimension {self.dim} and {other.dim}")
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.levels(), other.levels()))


def identity(d, s=None, t=None):
    return TruncatedSignature(np.zeros(d), np.zeros((d, d)), np.zeros((d, d, d)), s, t)


def segment_signature(delta, s=None, t=None):
    """Signature of a straight segment with increment delta."""
    delta = np.asarray(delta, dtype=float).reshape(-1)
    return TruncatedSignature(*_segment_arrays(delta), s, t)


def chen_concat(left, right):
    """Chen product S_{s,u} ⊗ S_{u,t} = S_{s,t}."""
    if left.dim != right.dim:
        raise DomainError(f"dimension mismatch in concatenation: {left.dim} vs {right.dim}")
    if left.t is not None and right.s is not None and not np.isclose(left.t, right.s, rtol=0.0, atol=ALGEBRA_TOL):
        raise DomainError(f"intervals do not meet: left ends at {left.t}, right starts at {right.s}")
    levels = _concat_arrays(*left.levels(), *right.levels())
    return TruncatedSignature(*levels, left.s, right.t)


def group_inverse(sig):
    """Inverse in the truncated tensor algebra; the signature of the reversed path."""
    return TruncatedSignature(*_inverse_arrays(*sig.levels()), sig.t, sig.s)


# -- piecewise-linear paths ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PiecewiseLinearPath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.size < 2:
            raise DomainError("a piecewise-linear path needs at least two knots")
        if values.shape[0] != times.size:
            raise DomainError(f"{times.size} knot times but {values.shape[0]} knot values")
        if np.any(np.diff(times) <= 0):
            raise DomainError("knot times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_sample(cls, sample):
        return cls(sample.times, sample.values)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def start(self):
        return float(self.times[0])

    @property
    def end(self):
        return float(self.times[-1])

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.times, self.values[:, c]) for c in range(self.dim)], axis=-1)
        return out


def lift_piecewise_linear(path, s, t):
    """Exact signature of the path over [s, t], segment by segment."""
    if not path.start <= s < t <= path.end:
        raise DomainError(f"interval [{s}, {t}] is outside the path domain [{path.start}, {path.end}]")
    inner = path.times[(path.times > s) & (path.times < t)]
    knots = np.concatenate(([s], inner, [t]))
    points = path.evaluate(knots)
    segments = [segment_signature(points[i + 1] - points[i], knots[i], knots[i + 1])
                for i in range(len(knots) - 1)]
    return reduce(chen_concat, segments)


# -- dyadic signature tables -----------------------------------------------------

def _prefix_signatures(increments):
    """Cumulative signatures S_{0,t_i} of consecutive linear segments."""
    cells, d = increments.shape
    seg1, seg2, seg3 = _segment_arrays(increments)
    p1 = np.zeros((cells + 1, d))
    p2 = np.zeros((cells + 1, d, d))
    p3 = np.zeros((cells + 1, d, d, d))
    p1[1:] = np.cumsum(seg1, axis=0)
    p2[1:] = np.cumsum(seg2 + _outer2(p1[:-1], seg1), axis=0)
    p3[1:] = np.cumsum(seg3 + p2[:-1, :, :, None] * seg1[:, None, None, :]
                       + p1[:-1, :, None, None] * seg2[:, None, :, :], axis=0)
    return p1, p2, p3


@dataclass(frozen=True, eq=False)
class SignatureTable:
    """Prefix signatures on a dyadic grid of depth ``depth`` over [0, horizon]."""

    times: np.ndarray = field(repr=False)
    prefix1: np.ndarray = field(repr=False)
    prefix2: np.ndarray = field(repr=False)
    prefix3: np.ndarray = field(repr=False)
    depth: int
    horizon: float
    path_level: int
    n_max: int

    @property
    def dim(self):
        return self.prefix1.shape[1]

    @property
    def cells(self):
        return self.times.size - 1

    def index_of(self, t):
        """Grid index of time t; off-grid times are rejected."""
        pos = t / self.horizon * self.cells
        idx = int(round(pos))
        if not 0 <= idx <= self.cells or abs(pos - idx) > 1e-9:
            raise DomainError(f"time {t} is not a point of the depth-{self.depth} grid")
        return idx

    def stride(self, n):
        if not 0 <= n <= self.depth:
            raise DomainError(f"dyadic level {n} is outside the table depth {self.depth}")
        return 2 ** (self.depth - n)

    def query_arrays(self, i, j):
        """Level arrays of S_{t_i, t_j} for broadcastable index arrays i, j."""
        i = np.asarray(i)
        j = np.asarray(j)
        inv = _inverse_arrays(self.prefix1[i], self.prefix2[i], self.prefix3[i])
        return _concat_arrays(*inv, self.prefix1[j], self.prefix2[j], self.prefix3[j])

    def query(self, i, j):
        if not 0 <= i <= j <= self.cells:
            raise DomainError(f"bad grid interval ({i}, {j}) for a table with {self.cells} cells")
        return TruncatedSignature(*self.query_arrays(i, j), float(self.times[i]), float(self.times[j]))

    def level_arrays(self, n):
        """Stacked signatures over [t^n_{k-1}, t^n_k], k = 1..2^n."""
        step = self.stride(n)
        right = np.arange(1, 2 ** n + 1) * step
        return self.query_arrays(right - step, right)

    def entry(self, n, k):
        if not 1 <= k <= 2 ** n:
            raise DomainError(f"dyadic index k={k} is outside 1..{2 ** n}")
        step = self.stride(n)
        return self.query((k - 1) * step, k * step)


def _dyadic_level_of(times):
    cells = times.size - 1
    level = int(round(np.log2(cells))) if cells > 0 else -1
    if level < 0 or 2 ** level != cells or times[0] != 0.0:
        raise DomainError("table construction needs knots on a dyadic grid starting at 0")
    expected = np.arange(cells + 1) * (times[-1] / cells)
    if not np.allclose(times, expected, rtol=0.0, atol=1e-12 * times[-1]):
        raise DomainError("table construction needs equally spaced dyadic knots")
    return level


def dyadic_signature_table(path, n_max, cap=MAX_TABLE_DEPTH):
    """Signatures over every dyadic interval of level n <= n_max of a dyadic-knot path."""
    if n_max < 0:
        raise DomainError(f"table depth must be nonnegative, got {n_max}")
    if n_max > cap:
        raise DomainError(f"table depth {n_max} exceeds the cap {cap}")
    path_level = _dyadic_level_of(path.times)
    depth = max(path_level, n_max)
    if depth > cap:
        raise DomainError(f"path level {path_level} exceeds the table cap {cap}")
    horizon = path.end
    times = np.arange(2 ** depth + 1) * (horizon / 2 ** depth)
    values = path.values if depth == path_level else path.evaluate(times)
    prefix = _prefix_signatures(np.diff(values, axis=0))
    for arr in (times, *prefix):
        arr.setflags(write=False)
    logger.debug(f"Built signature table: depth {depth}, d={path.dim}, path level {path_level}")
    return SignatureTable(times, *prefix, depth=depth, horizon=horizon, path_level=path_level, n_max=n_max)


def lift_sample(sample, n_max):
    """Dyadic signature table of the piecewise-linear interpolation of a sample."""
    return dyadic_signature_table(PiecewiseLinearPath.from_sample(sample), n_max)


def table_records(table, n_max=None):
    """Flat (n, k, level, flat_index, value) columns for export."""
    n_max = table.n_max if n_max is None else n_max
    columns = {"n": [], "k": [], "level": [], "flat_index": [], "value": []}
    for n in range(n_max + 1):
        for j, arr in enumerate(table.level_arrays(n), start=1):
            flat = arr.reshape(arr.shape[0], -1)
            count, width = flat.shape
            columns["n"].append(np.full(count * width, n))
            columns["k"].append(np.repeat(np.arange(1, count + 1), width))
            columns["level"].append(np.full(count * width, j))
            columns["flat_index"].append(np.tile(np.arange(width), count))
            columns["value"].append(flat.reshape(-1))
    return {key: np.concatenate(parts) for key, parts in columns.items()}


# -- refinement deltas between consecutive dyadic levels -----------------------

def _refinement_halves(sample, m, n, k):
    if not 0 <= n <= m:
        raise DomainError(f"refinement deltas need n <= m, got n={n}, m={m}")
    if sample.level < m + 1:
        raise DomainError(f"sample level {sample.level} cannot resolve level {m + 1}")
    if not 1 <= k <= 2 ** n:
        raise DomainError(f"dyadic index k={k} is outside 1..{2 ** n}")
    fine = restrict(sample, m + 1).values
    width = 2 ** (m - n)
    cells = np.arange((k - 1) * width, k * width)
    first = fine[2 * cells + 1] - fine[2 * cells]
    second = fine[2 * cells + 2] - fine[2 * cells + 1]
    return first, second


def refinement_delta_level2(sample, m, n, k):
    """Level-2 difference between the level-(m+1) and level-m lifts over [t^n_{k-1}, t^n_k].

    Equals (1/2) Σ_l (a_l ⊗ b_l - b_l ⊗ a_l) where a_l, b_l are the two
    level-(m+1) increments inside coarse cell l.
    """
    a, b = _refinement_halves(sample, m, n, k)
    return 0.5 * np.sum(_outer2(a, b) - _outer2(b, a), axis=0)


def _cell_level3_deltas(a, b):
    two_piece = (_outer3(a, a, a) / 6.0 + _outer3(b, b, b) / 6.0
                 + 0.5 * _outer3(a, a, b) + 0.5 * _outer3(a, b, b))
    whole = a + b
    return two_piece - _outer3(whole, whole, whole) / 6.0


def refinement_delta_level3_local(sample, m, n, k):
    """Sum over coarse cells of the per-cell level-3 refinement deltas."""
    a, b = _refinement_halves(sample, m, n, k)
    return np.sum(_cell_level3_deltas(a, b), axis=0)


def refinement_delta_level3(sample, m, n, k):
    """Full level-3 refinement delta over [t^n_{k-1}, t^n_k].

    The cell-local part is completed by the Chen cross terms
    Σ_l (A_l ⊗ x_{>l} + x_{<l} ⊗ A_l), A_l being the level-2 delta of cell l.
    """
    a, b = _refinement_halves(sample, m, n, k)
    whole = a + b
    areas = 0.5 * (_outer2(a, b) - _outer2(b, a))
    after = np.cumsum(whole[::-1], axis=0)[::-1] - whole
    before = np.cumsum(whole, axis=0) - whole
    cross = (areas[:, :, :, None] * after[:, None, None, :]
             + before[:, :, None, None] * areas[:, None, :, :])
    return np.sum(_cell_level3_deltas(a, b) + cross, axis=0)


def fine_level_closed_form(sample, m, n, k):
    """Signature over [t^n_{k-1}, t^n_k] for n > m, which lies inside one level-m cell."""
    if n <= m:
        raise DomainError(f"closed form inside a coarse cell needs n > m, got n={n}, m={m}")
    if not 1 <= k <= 2 ** n:
        raise DomainError(f"dyadic index k={k} is outside 1..{2 ** n}")
    coarse = restrict(sample, m).values
    cell = (k - 1) // 2 ** (n - m)
    delta = coarse[cell + 1] - coarse[cell]
    scale = 2.0 ** (m - n)
    horizon = sample.grid.horizon
    return TruncatedSignature(
        scale * delta,
        2.0 ** (2 * (m - n) - 1) * _outer2(delta, delta),
        (2.0 ** (3 * (m - n) - 1) / 3.0) * _outer3(delta, delta, delta),
        (k - 1) * horizon / 2 ** n,
        k * horizon / 2 ** n,
    )
