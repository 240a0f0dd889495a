"""
Replica pool and batch statistics for the Monte Carlo experiments.

Replicas are addressed by index; whatever order the workers finish in, results
come back in index order so every reduction is deterministic.
"""

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from tqdm import tqdm

from errors import DomainError

logger = logging.getLogger(__name__)

DEFAULT_BATCHES = 20
MAX_WORKERS = 32


def run_replicas(task, count, workers=1, desc="replicas", quiet=False):
    """Evaluate task(r) for r = 0..count-1 and return the results in index order."""
    if count < 1:
        raise DomainError(f"replica count must be positive, got {count}")
    workers = max(1, min(int(workers), MAX_WORKERS, count))
    results = [None] * count
    if workers == 1:
        for r in tqdm(range(count), desc=desc, disable=quiet, leave=False):
            results[r] = task(r)
        return results

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(task, r): r for r in range(count)}
        with tqdm(total=count, desc=desc, disable=quiet, leave=False) as bar:
            for future in concurrent.futures.as_completed(futures):
                r = futures[future]
                try:
                    results[r] = future.result()
                except Exception as e:
                    logger.error(f"❌ Replica {r} failed: {e}")
                    for pending in futures:
                        pending.cancel()
                    raise
                bar.update(1)
    return results


@dataclass(frozen=True)
class BatchEstimate:
    mean: float
    se: float
    batch_means: np.ndarray = field(repr=False)


def batch_means(values, batches=DEFAULT_BATCHES):
    """Mean of the values with a standard error from contiguous batch means."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < batches or batches < 2:
        raise DomainError(f"need at least {batches} (>= 2) values for batching, got {values.size}")
    means = np.array([chunk.mean() for chunk in np.array_split(values, batches)])
    se = float(np.std(means, ddof=1) / math.sqrt(batches))
    return BatchEstimate(mean=float(values.mean()), se=se, batch_means=means)


def moment_estimate(values, order, batches=DEFAULT_BATCHES):
    """(E V)^{1/order} from per-replica values V, with a delta-method standard error.

    Returns (moment, se, per-batch moments).
    """
    est = batch_means(values, batches)
    if est.mean <= 0.0:
        return 0.0, 0.0, np.zeros(batches)
    moment = est.mean ** (1.0 / order)
    se = moment / (order * est.mean) * est.se
    return moment, se, np.maximum(est.batch_means, 0.0) ** (1.0 / order)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    batch_slopes: np.ndarray = field(default=None, repr=False)
    ols_stderr: float = math.nan
    ols_ci_low: float = math.nan
    ols_ci_high: float = math.nan


def fit_slope(x, y):
    """Ordinary least squares y = a + b x with a 95% confidence interval for b."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise DomainError("a slope needs at least two points")
    fit = stats.linregress(x, y)
    half = stats.t.ppf(0.975, x.size - 2) * fit.stderr if x.size > 2 else math.inf
    return SlopeFit(slope=float(fit.slope), intercept=float(fit.intercept), stderr=float(fit.stderr),
                    ci_low=float(fit.slope - half), ci_high=float(fit.slope + half))


def log2_slope(x, moments, batch_moments):
    """Slope of log2(moment) against x; the interval comes from per-batch OLS slopes.

    ``batch_moments`` has one row per batch and one column per x value. The
    ols_* fields keep the plain regression interval over the pooled moments,
    which ignores the correlation between m values.
    """
    x = np.asarray(x, dtype=float)
    moments = np.asarray(moments, dtype=float)
    batch_moments = np.asarray(batch_moments, dtype=float)
    if np.any(moments <= 0.0) or np.any(batch_moments <= 0.0):
        raise DomainError("log2 slope needs strictly positive moments")
    pooled = fit_slope(x, np.log2(moments))
    slopes = np.array([fit_slope(x, np.log2(row)).slope for row in batch_moments])
    b = slopes.size
    se = float(np.std(slopes, ddof=1) / math.sqrt(b))
    half = stats.t.ppf(0.975, b - 1) * se
    return SlopeFit(slope=pooled.slope, intercept=pooled.intercept, stderr=se,
                    ci_low=pooled.slope - half, ci_high=pooled.slope + half, batch_slopes=slopes,
                    ols_stderr=pooled.stderr, ols_ci_low=pooled.ci_low, ols_ci_high=pooled.ci_high)
