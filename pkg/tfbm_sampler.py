"""
Exact joint-Gaussian sampling of tempered fractional Brownian motion on dyadic grids.

Every component of a sample is drawn from its own Philox stream. The stream of
component ``c`` in replica ``r`` is seeded by ``SeedSequence(seed, spawn_key=(r, c))``,
so a replica can be regenerated on its own, on any machine, from (seed, r).
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from bessel import variance_function
from errors import DomainError, NumericError

logger = logging.getLogger(__name__)

MAX_GRID_LEVEL = 12
RIDGE_SCALE = 1e-12
MAX_SEED = 2 ** 64 - 1


@dataclass(frozen=True)
class DyadicGrid:
    """Points t_k = k T / 2^n, k = 0..2^n."""

    level: int
    horizon: float = 1.0
    allow_large: bool = False

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 0:
            raise DomainError(f"grid level must be a nonnegative integer, got {self.level}")
        if not self.horizon > 0:
            raise DomainError(f"grid horizon must be positive, got {self.horizon}")
        if self.level > MAX_GRID_LEVEL and not self.allow_large:
            raise DomainError(
                f"grid level {self.level} exceeds the cap {MAX_GRID_LEVEL}; pass allow_large=True to override")
        object.__setattr__(self, "level", int(self.level))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def cells(self):
        return 2 ** self.level

    @property
    def mesh(self):
        return self.horizon / self.cells

    @property
    def points(self):
        return np.arange(self.cells + 1) * self.mesh

    def coarsen(self, m):
        if m > self.level:
            raise DomainError(f"cannot coarsen a level-{self.level} grid to level {m}")
        return DyadicGrid(m, self.horizon, self.allow_large)


@dataclass(frozen=True, eq=False)
class GaussianPathSample:
    grid: DyadicGrid
    H: float
    lam: float
    values: np.ndarray = field(repr=False)
    seed: int
    replica: int = 0

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.grid.points

    @property
    def level(self):
        return self.grid.level


def component_generator(seed, replica, component):
    """Independent random stream for one (replica, component) pair."""
    if not 0 <= int(seed) <= MAX_SEED:
        raise DomainError(f"seed must be a 64-bit nonnegative integer, got {seed}")
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(replica), int(component)))
    return np.random.Generator(np.random.Philox(sequence))


@lru_cache(maxsize=32)
def _variance_lags(level, horizon, H, lam):
    mesh = horizon / 2 ** level
    lags = np.array([variance_function(H, lam, k * mesh) for k in range(2 ** level + 1)])
    lags.setflags(write=False)
    return lags


def covariance_matrix(grid, H, lam):
    """Covariance of (B_{t_1}, ..., B_{t_N}) over the nonzero grid points."""
    lags = _variance_lags(grid.level, grid.horizon, float(H), float(lam))
    idx = np.arange(1, grid.cells + 1)
    return 0.5 * (lags[idx][:, None] + lags[idx][None, :] - lags[np.abs(idx[:, None] - idx[None, :])])


@lru_cache(maxsize=8)
def _cholesky_cached(level, horizon, allow_large, H, lam):
    grid = DyadicGrid(level, horizon, allow_large)
    cov = covariance_matrix(grid, H, lam)
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        n = cov.shape[0]
        ridge = RIDGE_SCALE * np.trace(cov) / n
        logger.warning(f"⚠️ Cholesky failed at level {level} (H={H}, lambda={lam}); retrying with ridge {ridge:.3e}")
        try:
            factor = np.linalg.cholesky(cov + ridge * np.eye(n))
        except np.linalg.LinAlgError:
            smallest = float(np.linalg.eigvalsh(cov)[0])
            raise NumericError(
                "covariance matrix is not positive definite even after the ridge",
                {"level": level, "H": H, "lambda": lam, "ridge": ridge, "smallest_eigenvalue": smallest},
            ) from None
    factor.setflags(write=False)
    return factor


def cholesky_factor(grid, H, lam):
    """Lower Cholesky factor of covariance_matrix; cached and read-only."""
    return _cholesky_cached(grid.level, grid.horizon, grid.allow_large, float(H), float(lam))


def sample_tfbm(grid, H, lam, d, seed, replica=0):
    """Draw one d-component TFBM path on the grid; B_0 = 0."""
    if d < 1:
        raise DomainError(f"component count must be at least 1, got d={d}")
    factor = cholesky_factor(grid, H, lam)
    values = np.zeros((grid.cells + 1, d))
    for component in range(d):
        normals = component_generator(seed, replica, component).standard_normal(grid.cells)
        values[1:, component] = factor @ normals
    values.setflags(write=False)
    return GaussianPathSample(grid=grid, H=float(H), lam=float(lam), values=values,
                              seed=int(seed), replica=int(replica))


def restrict(sample, m):
    """The same path seen on the coarser level-m grid (every 2^{M-m}-th row)."""
    if m > sample.level:
        raise DomainError(f"cannot restrict a level-{sample.level} sample to level {m}")
    if m < 0:
        raise DomainError(f"restriction level must be nonnegative, got {m}")
    if m == sample.level:
        return sample
    stride = 2 ** (sample.level - m)
    values = np.ascontiguousarray(sample.values[::stride])
    values.setflags(write=False)
    return GaussianPathSample(grid=sample.grid.coarsen(m), H=sample.H, lam=sample.lam,
                              values=values, seed=sample.seed, replica=sample.replica)


def increment_covariance(H, lam, m, l, r):
    """Second difference V(t+h) + V(t-h) - 2V(t), t = (2l - 2r)h, h = 2^{-(m+1)}.

    This is the un-halved form, i.e. twice E(Δ_{2l}B Δ_{2r}B) for the level-(m+1)
    increments. On the diagonal it is 2V(h).
    """
    if l < 1 or r < 1:
        raise DomainError(f"increment indices start at 1, got l={l}, r={r}")
    if m < 0:
        raise DomainError(f"level must be nonnegative, got m={m}")
    h = 2.0 ** -(m + 1)
    t = (2 * l - 2 * r) * h
    return (variance_function(H, lam, abs(t + h)) + variance_function(H, lam, abs(t - h))
            - 2.0 * variance_function(H, lam, abs(t)))


def increment_covariance_bound(H, lam, m):
    """Diagonal bound 2 C²_{2^{-m}} 2^{-2mH}."""
    return 2.0 * variance_function(H, lam, 2.0 ** -m)
