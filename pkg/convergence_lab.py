"""
Monte Carlo convergence lab for TFBM rough-path lifts and the RDEs they drive.

Usage:
  python convergence_lab.py sample     --level 8 --dim 2 --seed 7
  python convergence_lab.py lift       --level 8 --n-max 8
  python convergence_lab.py solve      --field sine --scale 0.05 --drift relax --method doss_sussmann
  python convergence_lab.py decay      --replicas 2000 --m-min 4 --m-max 9 --n 3 --svg
  python convergence_lab.py cauchy     --hurst 0.32 --p 3.3 --theta 0.02 --beta 0.01 --replicas 500
  python convergence_lab.py covariance --level 5 --replicas 10000
  python convergence_lab.py refine     --field sine --m-min 4 --m-max 8 --svg

Every flag can also come from ``--config FILE`` (flat key=value lines); flags
win over the file. Results land in ``--out`` (default $ROUGHLAB_OUT or
``results``) next to a ``manifest.json`` recording each run.
"""

import argparse
import dataclasses
import logging
import math
import os
import sys
import time
from dataclasses import dataclass

import colorlog
import numpy as np
import pandas as pd
from dotenv import dotenv_values

from bessel import tempering_coefficient, variance_function
from controlled_paths import FIELD_CATALOG, catalog_field
from errors import ConfigError, ContractError, DomainError, NumericError
from montecarlo import DEFAULT_BATCHES, batch_means, log2_slope, moment_estimate, run_replicas
from plots import plot_decay, plot_refinement
from rde_solver import (METHODS, RDEProblem, StepSpec, apriori_report, solution_pvar_triple,
                        solve_pure_rde, solve_rde_with_drift)
from rough_norms import (DEFAULT_GAMMA_W, DEFAULT_N_MAX, DEFAULT_P, dp_proxy, rho_metrics,
                         rough_holder_norm, rough_pvar_norm)
from rough_tensor import (lift_sample, refinement_delta_level2, refinement_delta_level3,
                          refinement_delta_level3_local)
from storage import (load_sample_csv, record_run, save_frame_csv, save_report_yaml, save_sample_csv,
                     save_solution_csv, save_table_csv)
from tfbm_sampler import MAX_GRID_LEVEL, MAX_SEED, DyadicGrid, covariance_matrix, restrict, sample_tfbm

logger = logging.getLogger(__name__)

OUT_DIR = os.environ.get("ROUGHLAB_OUT", "results")
DEFAULT_WORKERS = int(os.environ.get("ROUGHLAB_WORKERS", "1"))

MIN_RATE_REPLICAS = 100
MAX_COVARIANCE_LEVEL = 6
DRIFTS = {
    "none": None,
    "relax": lambda y: 1.0 - y,
}
DRIFT_LIPSCHITZ = {"none": 0.0, "relax": 1.0}
SUBCOMMANDS = ("sample", "lift", "solve", "decay", "cauchy", "covariance", "refine")


# -- configuration ---------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    H: float = 0.3
    lam: float = 1.0
    dim: int = 2
    level: int = 10
    m_min: int = 4
    m_max: int = 9
    n: int = 3
    p: float = DEFAULT_P
    gamma_w: float = DEFAULT_GAMMA_W
    n_max: int = DEFAULT_N_MAX
    replicas: int = 2000
    seed: int = 20240601
    out: str = OUT_DIR
    theta: float = 0.02
    beta: float = 0.01
    vector_field: str = "sine"
    scale: float = 0.05
    method: str = "direct"
    substeps: int = 1
    drift: str = "none"
    y0: float = 0.5
    workers: int = DEFAULT_WORKERS

    def _require(self, condition, message):
        if not condition:
            raise ConfigError(message)

    def validate(self, experiment=None):
        """Reject configurations an experiment cannot run meaningfully."""
        self._require(0.0 < self.H < 1.0, f"Hurst index must lie in (0, 1), got {self.H}")
        self._require(self.lam > 0.0, f"tempering rate must be positive, got {self.lam}")
        self._require(self.dim >= 1, f"dimension must be at least 1, got {self.dim}")
        self._require(0 <= self.level <= MAX_GRID_LEVEL, f"level must lie in 0..{MAX_GRID_LEVEL}, got {self.level}")
        self._require(0 <= self.seed <= MAX_SEED, f"seed must be a 64-bit nonnegative integer, got {self.seed}")
        self._require(self.replicas >= 1, f"need at least one replica, got {self.replicas}")
        self._require(self.workers >= 1, f"need at least one worker, got {self.workers}")
        self._require(self.n_max >= 1, f"n_max must be at least 1, got {self.n_max}")
        self._require(self.substeps >= 1, f"substeps must be at least 1, got {self.substeps}")
        self._require(self.method in METHODS, f"method must be one of {METHODS}, got '{self.method}'")
        self._require(self.vector_field in FIELD_CATALOG,
                      f"field must be one of {sorted(FIELD_CATALOG)}, got '{self.vector_field}'")
        self._require(self.drift in DRIFTS, f"drift must be one of {sorted(DRIFTS)}, got '{self.drift}'")

        if experiment in ("decay", "cauchy"):
            self._require(0.25 < self.H < 0.5, f"the lift estimates need 1/4 < H < 1/2, got H={self.H}")
            self._require(2.0 < self.p < 4.0, f"the lift estimates need 2 < p < 4, got p={self.p}")
            self._require(1 <= self.m_min <= self.m_max < self.level,
                          f"need 1 <= m_min <= m_max < level, got m in [{self.m_min}, {self.m_max}], level {self.level}")
            self._require(self.replicas >= MIN_RATE_REPLICAS,
                          f"rate experiments need R >= {MIN_RATE_REPLICAS} replicas, got R={self.replicas}; "
                          f"about 2000 are required for slopes within ±0.15")
        if experiment == "decay":
            self._require(self.dim >= 2, "level-2 and level-3 deltas vanish for d = 1; use --dim 2 or more")
            self._require(1 <= self.n < self.m_min, f"need 1 <= n < m_min, got n={self.n}, m_min={self.m_min}")
        if experiment == "cauchy":
            hp = self.H * self.p
            self._require(self.theta > 0.0, f"theta must be positive, got {self.theta}")
            self._require(hp > 1.0 + self.theta,
                          f"summability fails: H*p = {hp:.4f} <= 1 + theta = {1.0 + self.theta:.4f}; "
                          f"raise p above {(1.0 + self.theta) / self.H:.4f} or lower theta")
            self._require(self.beta > 0.0, f"beta must be positive, got {self.beta}")
            beta_max = (hp - self.theta - 1.0) / (2.0 * self.p)
            if self.beta >= beta_max:
                logger.warning(f"⚠️ beta={self.beta} is not below (Hp - theta - 1)/(2p) = {beta_max:.5f}; "
                               f"the threshold 2^(-m beta) is then only a reference line")
        if experiment == "covariance":
            self._require(1 <= self.level <= MAX_COVARIANCE_LEVEL,
                          f"the full covariance check runs on levels 1..{MAX_COVARIANCE_LEVEL}, got {self.level}")
            self._require(self.replicas >= DEFAULT_BATCHES, f"need at least {DEFAULT_BATCHES} replicas for batching")
        if experiment == "refine":
            self._require(1 <= self.m_min <= self.m_max < self.level,
                          f"need 1 <= m_min <= m_max < level, got m in [{self.m_min}, {self.m_max}], level {self.level}")
            self._require(self.replicas >= DEFAULT_BATCHES, f"need at least {DEFAULT_BATCHES} replicas for batching")
        return self


# flag / file key -> (config attribute, parser)
CONFIG_KEYS = {
    "hurst": ("H", float), "lambda": ("lam", float), "dim": ("dim", int), "level": ("level", int),
    "m_min": ("m_min", int), "m_max": ("m_max", int), "n": ("n", int), "p": ("p", float),
    "gamma_w": ("gamma_w", float), "n_max": ("n_max", int), "replicas": ("replicas", int),
    "seed": ("seed", int), "out": ("out", str), "theta": ("theta", float), "beta": ("beta", float),
    "field": ("vector_field", str), "scale": ("scale", float), "method": ("method", str),
    "substeps": ("substeps", int), "drift": ("drift", str), "y0": ("y0", float), "workers": ("workers", int),
}


def load_config_file(path):
    """Parse a flat key=value file into ExperimentConfig overrides."""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    overrides = {}
    for key, raw in dotenv_values(path).items():
        name = key.strip().lower().replace("-", "_")
        if name not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key '{key}' in {path}")
        attr, parse = CONFIG_KEYS[name]
        try:
            overrides[attr] = parse(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"config key '{key}' has an invalid value '{raw}'") from None
    return overrides


def build_config(args):
    """Defaults, then the config file, then explicit flags."""
    overrides = load_config_file(args.config) if getattr(args, "config", None) else {}
    for name, (attr, _) in CONFIG_KEYS.items():
        value = getattr(args, name, None)
        if value is not None:
            overrides[attr] = value
    return dataclasses.replace(ExperimentConfig(), **overrides)


def _draw(config, replica, level=None):
    grid = DyadicGrid(config.level if level is None else level)
    return sample_tfbm(grid, config.H, config.lam, config.dim, config.seed, replica)


# -- decay of the refinement deltas ------------------------------------------------------

@dataclass(frozen=True)
class DecayResult:
    rows: pd.DataFrame
    slopes: pd.DataFrame
    fits: dict


def decay_replica(config, sample):
    """Per-replica mean over k of |Δ|² and |Δ|^{p/j} for each (j, m); shape (levels, m, 2) plus local part."""
    ms = range(config.m_min, config.m_max + 1)
    n = config.n
    out = np.zeros((3, len(ms), 2))
    local = np.zeros((len(ms), 2))
    ks = range(1, 2 ** n + 1)
    for col, m in enumerate(ms):
        fine, coarse = restrict(sample, m + 1).values, restrict(sample, m).values
        fine_step, coarse_step = 2 ** (m + 1 - n), 2 ** (m - n)
        for k in ks:
            first = (fine[k * fine_step] - fine[(k - 1) * fine_step]) \
                - (coarse[k * coarse_step] - coarse[(k - 1) * coarse_step])
            deltas = (first, refinement_delta_level2(sample, m, n, k), refinement_delta_level3(sample, m, n, k))
            for j, delta in enumerate(deltas, start=1):
                size = float(np.linalg.norm(delta))
                out[j - 1, col] += (size ** 2, size ** (config.p / j))
            size = float(np.linalg.norm(refinement_delta_level3_local(sample, m, n, k)))
            local[col] += (size ** 2, size ** (config.p / 3.0))
    count = 2 ** n
    return out / count, local / count


def run_decay(config, quiet=False):
    """Moments of the level-j refinement deltas at fixed n against the coarse level m."""
    config.validate("decay")
    logger.info(f"📐 Decay experiment: H={config.H}, n={config.n}, m in [{config.m_min}, {config.m_max}], "
                f"R={config.replicas}")
    results = run_replicas(lambda r: decay_replica(config, _draw(config, r)), config.replicas,
                           config.workers, desc="decay", quiet=quiet)
    full = np.stack([r[0] for r in results])   # (R, 3, M, 2)
    local = np.stack([r[1] for r in results])  # (R, M, 2)
    ms = np.arange(config.m_min, config.m_max + 1)

    rows, batch_l2 = [], {}
    for j in (1, 2, 3):
        batch_l2[j] = []
        for col, m in enumerate(ms):
            moment_l2, se_l2, batches = moment_estimate(full[:, j - 1, col, 0], 2.0)
            moment_pj, se_pj, _ = moment_estimate(full[:, j - 1, col, 1], config.p / j)
            row = {"j": j, "m": int(m), "n": config.n, "moment_l2": moment_l2, "se_l2": se_l2,
                   "moment_pj": moment_pj, "se_pj": se_pj, "moment_local_l2": math.nan, "se_local_l2": math.nan}
            if j == 3:
                row["moment_local_l2"], row["se_local_l2"], local_batches = moment_estimate(local[:, col, 0], 2.0)
                batch_l2.setdefault("local", []).append(local_batches)
            rows.append(row)
            batch_l2[j].append(batches)
    frame = pd.DataFrame(rows)
    _require_exact_level1(frame)

    expected = {2: -(4 * config.H - 1) / 2, 3: -(4 * config.H - 1) / 2, "local": -(6 * config.H - 1) / 2}
    fits, slope_rows = {}, []
    for key, part, j in ((2, "full", 2), (3, "full", 3), ("local", "local", 3)):
        column = "moment_local_l2" if part == "local" else "moment_l2"
        moments = frame[frame["j"] == j][column].to_numpy()
        fit = log2_slope(ms, moments, np.array(batch_l2[key]).T)
        fits.setdefault(j, {})[part] = fit
        slope_rows.append({"j": j, "part": part, "slope": fit.slope, "stderr": fit.stderr,
                           "ci_low": fit.ci_low, "ci_high": fit.ci_high, "ols_stderr": fit.ols_stderr,
                           "ols_ci_low": fit.ols_ci_low, "ols_ci_high": fit.ols_ci_high,
                           "expected": expected[key]})
        logger.info(f"  j={j} ({part}): slope {fit.slope:.4f} [{fit.ci_low:.4f}, {fit.ci_high:.4f}], "
                    f"expected {expected[key]:.4f}")
    return DecayResult(rows=frame, slopes=pd.DataFrame(slope_rows), fits=fits)


def _require_exact_level1(frame):
    """Level-m and level-(m+1) lifts share every level-n increment for n <= m."""
    level1 = frame[frame["j"] == 1]
    residual = level1[["moment_l2", "moment_pj"]].to_numpy()
    if np.any(residual != 0.0):
        worst = int(np.argmax(residual.max(axis=1)))
        raise ContractError("level-1 refinement differences are not exactly zero",
                            {"max_residual": float(residual.max()), "m": int(level1["m"].iloc[worst]),
                             "n": int(level1["n"].iloc[worst])})


# -- Cauchy diagnostic ------------------------------------------------------------------

@dataclass(frozen=True)
class CauchyResult:
    rows: pd.DataFrame
    values: np.ndarray


def cauchy_values(config, sample):
    """I(B^m, B^{m+1}) for each m of the configured range, for one sample."""
    out = []
    for m in range(config.m_min, config.m_max + 1):
        coarse = lift_sample(restrict(sample, m), config.n_max)
        fine = lift_sample(restrict(sample, m + 1), config.n_max)
        out.append(dp_proxy(coarse, fine, config.p, config.gamma_w, config.n_max))
    return np.array(out)


def run_cauchy(config, quiet=False):
    config.validate("cauchy")
    logger.info(f"🔗 Cauchy diagnostic: H={config.H}, p={config.p}, theta={config.theta}, beta={config.beta}")
    values = np.stack(run_replicas(lambda r: cauchy_values(config, _draw(config, r)), config.replicas,
                                   config.workers, desc="cauchy", quiet=quiet))
    rows = []
    for col, m in enumerate(range(config.m_min, config.m_max + 1)):
        column = values[:, col]
        est = batch_means(column)
        threshold = 2.0 ** (-m * config.beta)
        rows.append({"m": m, "median_I": float(np.median(column)), "mean_I": est.mean, "se_I": est.se,
                     "q90_I": float(np.quantile(column, 0.9)), "threshold": threshold,
                     "fraction_below": float(np.mean(column <= threshold))})
    frame = pd.DataFrame(rows)
    medians = frame["median_I"].to_numpy()
    if np.any(np.diff(medians) > 0):
        logger.warning("⚠️ Median I is not decreasing in m over this range")
    return CauchyResult(rows=frame, values=values)


# -- covariance check ---------------------------------------------------------------------

@dataclass(frozen=True)
class CovarianceResult:
    rows: pd.DataFrame
    summary: dict


def run_covariance(config, quiet=False):
    """Empirical covariance of all sampled components against the exact covariance."""
    config.validate("covariance")
    grid = DyadicGrid(config.level)
    logger.info(f"📊 Covariance check: level {config.level}, {config.replicas} replicas x {config.dim} components")
    paths = np.concatenate(run_replicas(lambda r: _draw(config, r).values[1:].T, config.replicas,
                                        config.workers, desc="covariance", quiet=quiet))
    count = paths.shape[0]
    theory = covariance_matrix(grid, config.H, config.lam)
    empirical = paths.T @ paths / count
    # Gaussian fourth moments: Var(B_s B_t) = C_ss C_tt + C_st²
    se = np.sqrt((np.outer(np.diag(theory), np.diag(theory)) + theory ** 2) / count)
    batch_cov = np.stack([chunk.T @ chunk / chunk.shape[0] for chunk in np.array_split(paths, DEFAULT_BATCHES)])
    se_batch = batch_cov.std(axis=0, ddof=1) / math.sqrt(DEFAULT_BATCHES)
    z = (empirical - theory) / se

    times = grid.points[1:]
    i, j = np.triu_indices(times.size)
    frame = pd.DataFrame({"i": i + 1, "j": j + 1, "t_i": times[i], "t_j": times[j], "theory": theory[i, j],
                          "empirical": empirical[i, j], "se": se[i, j], "se_batch": se_batch[i, j], "z": z[i, j]})
    mean = paths.mean(axis=0)
    mean_z = mean / np.sqrt(np.diag(theory) / count)
    last = times.size - 1
    summary = {
        "paths": int(count),
        "max_abs_z": float(np.max(np.abs(z))),
        "max_abs_z_batch": float(np.max(np.abs((empirical - theory) / se_batch))),
        "diagonal_t1_z": float(z[last, last]) if math.isclose(times[last], 1.0) else math.nan,
        "c1_squared": tempering_coefficient(config.H, config.lam, 1.0),
        "variance_t1_empirical": float(empirical[last, last]),
        "variance_t1_theory": float(variance_function(config.H, config.lam, times[last])),
        "max_abs_mean_z": float(np.max(np.abs(mean_z))),
    }
    logger.info(f"  max |z| = {summary['max_abs_z']:.3f} over {len(frame)} entries")
    return CovarianceResult(rows=frame, summary=summary)


# -- RDE refinement --------------------------------------------------------------------------

@dataclass(frozen=True)
class RefinementResult:
    rows: pd.DataFrame
    distances: np.ndarray
    closed_form_errors: np.ndarray


def _solve_on(config, g, table):
    y_a = np.full(g.state_dim, config.y0)
    step = StepSpec(substeps=config.substeps)
    drift = DRIFTS[config.drift]
    if drift is None and config.method == "direct":
        return solve_pure_rde(g, table, y_a, step=step)
    problem = RDEProblem(g, y_a, table, drift=drift, drift_lipschitz=DRIFT_LIPSCHITZ[config.drift])
    return solve_rde_with_drift(problem, config.method, step)


def refinement_replica(config, g, sample):
    """Sup-distances between solutions driven by the level-m and level-(m+1) lifts."""
    levels = range(config.m_min, config.m_max + 2)
    solutions = {m: _solve_on(config, g, lift_sample(restrict(sample, m), min(config.n_max, m)))
                 for m in levels}
    distances, errors = [], []
    closed = config.vector_field == "linear" and config.dim == 1 and config.drift == "none"
    for m in levels[:-1]:
        coarse, fine = solutions[m].values, solutions[m + 1].values[::2]
        distances.append(float(np.max(np.linalg.norm(coarse - fine, axis=1))))
        if closed:
            driver = restrict(sample, m).values[:, 0]
            exact = config.y0 * np.exp(config.scale * driver)
            errors.append(float(np.max(np.abs(coarse[:, 0] - exact))))
        else:
            errors.append(math.nan)
    return np.array(distances), np.array(errors)


def run_rde_refinement(config, quiet=False):
    config.validate("refine")
    g = catalog_field(config.vector_field, config.dim, config.dim, config.scale)
    logger.info(f"🧮 RDE refinement: field {g.name} (scale {config.scale}), method {config.method}, "
                f"m in [{config.m_min}, {config.m_max}]")
    results = run_replicas(lambda r: refinement_replica(config, g, _draw(config, r)), config.replicas,
                           config.workers, desc="refine", quiet=quiet)
    distances = np.stack([r[0] for r in results])
    errors = np.stack([r[1] for r in results])
    rows = []
    for col, m in enumerate(range(config.m_min, config.m_max + 1)):
        column = distances[:, col]
        est = batch_means(column)
        rows.append({"m": m, "median_distance": float(np.median(column)), "mean_distance": est.mean,
                     "se_distance": est.se, "q90_distance": float(np.quantile(column, 0.9)),
                     "median_closed_form_error": float(np.median(errors[:, col]))})
    frame = pd.DataFrame(rows)
    if np.any(np.diff(frame["median_distance"].to_numpy()) > 0):
        logger.warning("⚠️ Median refinement distance is not decreasing in m")
    return RefinementResult(rows=frame, distances=distances, closed_form_errors=errors)


# -- single-path commands --------------------------------------------------------------------

def command_sample(config, args):
    sample = _draw(config, 0)
    return save_sample_csv(sample, os.path.join(config.out, "sample.csv"))


def _input_sample(config, args):
    if getattr(args, "input", None):
        logger.info(f"📂 Reading sample from {args.input}")
        return load_sample_csv(args.input)
    return _draw(config, 0)


def command_lift(config, args):
    sample = _input_sample(config, args)
    table = lift_sample(sample, config.n_max)
    metrics = rho_metrics(table, None, config.p, config.gamma_w, config.n_max)
    summary = {
        "depth": table.depth,
        "path_level": table.path_level,
        "rough_pvar_norm": rough_pvar_norm(table, p=config.p),
        "rough_holder_norm": rough_holder_norm(table, alpha=1.0 / config.p),
        "rho": list(metrics.as_tuple()),
    }
    logger.info(f"  rough {config.p}-variation norm: {summary['rough_pvar_norm']:.6f}")
    return [save_table_csv(table, os.path.join(config.out, "table.csv")),
            save_report_yaml(summary, os.path.join(config.out, "lift_summary.yaml"))]


def command_solve(config, args):
    sample = _input_sample(config, args)
    table = lift_sample(sample, min(config.n_max, sample.level))
    g = catalog_field(config.vector_field, config.dim, sample.dim, config.scale)
    solution = _solve_on(config, g, table)
    problem = RDEProblem(g, np.full(g.state_dim, config.y0), table, drift=DRIFTS[config.drift],
                         drift_lipschitz=DRIFT_LIPSCHITZ[config.drift])
    report = apriori_report(problem, p=config.p).as_dict()
    realized_sup = float(np.max(np.linalg.norm(solution.values, axis=1)))
    report["realized_sup"] = realized_sup
    if report["status"] == "ok":
        report["realized_triple"] = solution_pvar_triple(solution, g, table, config.p)
        report["sup_dominated"] = bool(realized_sup <= report["sup_bound"])
        report["triple_dominated"] = bool(report["realized_triple"] <= report["triple_bound"])
    logger.info(f"  ‖y‖_∞ = {realized_sup:.6f}, a priori status {report['status']}")
    return [save_solution_csv(solution, os.path.join(config.out, "solution.csv")),
            save_report_yaml(report, os.path.join(config.out, "apriori.yaml"))]


def command_decay(config, args):
    result = run_decay(config, quiet=args.quiet)
    outputs = [save_frame_csv(result.rows, os.path.join(config.out, "decay.csv")),
               save_frame_csv(result.slopes, os.path.join(config.out, "decay_slopes.csv"))]
    if args.svg:
        outputs.append(plot_decay(result.rows, result.fits, os.path.join(config.out, "decay.svg"), config.n))
    return outputs


def command_cauchy(config, args):
    result = run_cauchy(config, quiet=args.quiet)
    per_replica = pd.DataFrame({
        "replica": np.repeat(np.arange(config.replicas), result.values.shape[1]),
        "m": np.tile(np.arange(config.m_min, config.m_max + 1), config.replicas),
        "I": result.values.reshape(-1),
    })
    return [save_frame_csv(result.rows, os.path.join(config.out, "cauchy.csv")),
            save_frame_csv(per_replica, os.path.join(config.out, "cauchy_values.csv"))]


def command_covariance(config, args):
    result = run_covariance(config, quiet=args.quiet)
    return [save_frame_csv(result.rows, os.path.join(config.out, "covariance.csv")),
            save_frame_csv(pd.DataFrame([result.summary]), os.path.join(config.out, "covariance_summary.csv"))]


def command_refine(config, args):
    result = run_rde_refinement(config, quiet=args.quiet)
    outputs = [save_frame_csv(result.rows, os.path.join(config.out, "refine.csv"))]
    if args.svg:
        outputs.append(plot_refinement(result.rows, os.path.join(config.out, "refine.svg")))
    return outputs


COMMANDS = {
    "sample": command_sample,
    "lift": command_lift,
    "solve": command_solve,
    "decay": command_decay,
    "cauchy": command_cauchy,
    "covariance": command_covariance,
    "refine": command_refine,
}


# -- command line ------------------------------------------------------------------------------

def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--hurst", type=float, help="Hurst index H")
    shared.add_argument("--lambda", type=float, help="tempering rate")
    shared.add_argument("--dim", type=int, help="number of driver components")
    shared.add_argument("--level", type=int, help="finest dyadic level of the samples")
    shared.add_argument("--seed", type=int, help="base seed")
    shared.add_argument("--replicas", type=int, help="Monte Carlo replicas")
    shared.add_argument("--p", type=float, help="variation exponent")
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--config", help="flat key=value file with flag defaults")
    shared.add_argument("--workers", type=int, help="worker threads for replicas")
    shared.add_argument("--svg", action="store_true", help="also write SVG figures")
    shared.add_argument("--verbose", action="store_true", help="debug logging")
    shared.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")
    shared.add_argument("--m-min", dest="m_min", type=int, help="smallest coarse level")
    shared.add_argument("--m-max", dest="m_max", type=int, help="largest coarse level")
    shared.add_argument("--n", type=int, help="fixed dyadic level of the decay entries")
    shared.add_argument("--n-max", dest="n_max", type=int, help="deepest level in the rho metrics")
    shared.add_argument("--gamma-w", dest="gamma_w", type=float, help="level weight exponent in rho")
    shared.add_argument("--theta", type=float, help="summability slack theta")
    shared.add_argument("--beta", type=float, help="Cauchy threshold exponent beta")
    shared.add_argument("--field", choices=sorted(FIELD_CATALOG), help="diffusion field")
    shared.add_argument("--scale", type=float, help="diffusion field scale")
    shared.add_argument("--method", choices=METHODS, help="drifted RDE method")
    shared.add_argument("--substeps", type=int, help="substeps per driver segment")
    shared.add_argument("--drift", choices=sorted(DRIFTS), help="drift: none or relax (f(y) = 1 - y)")
    shared.add_argument("--y0", type=float, help="initial value of every state component")
    shared.add_argument("--input", help="sample CSV to lift or drive with (lift, solve)")

    parser = argparse.ArgumentParser(description="TFBM rough-path convergence lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[shared])
    return parser


def setup_logging(verbose=False, quiet=False):
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(
        '%(log_color)s%(asctime)s - %(levelname)s - %(message)s'))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO)


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    say = (lambda *a: None) if args.quiet else print

    say("=" * 60)
    say(f"🚀 TFBM Rough-Path Lab: {args.command}")
    say("=" * 60)
    started = time.perf_counter()
    try:
        config = build_config(args)
        config.validate(args.command)
        os.makedirs(config.out, exist_ok=True)
        outputs = COMMANDS[args.command](config, args)
    except DomainError as e:
        logger.error(f"❌ Configuration rejected: {e}")
        return 2
    except NumericError as e:
        logger.error(f"❌ Numerical failure: {e}")
        return 3
    except ContractError as e:
        logger.error(f"❌ Exact identity violated: {e}")
        return 4

    elapsed = time.perf_counter() - started
    record_run(config.out, args.command, dataclasses.asdict(config), outputs, elapsed)
    say("\n" + "=" * 60)
    say("📈 FINAL SUMMARY")
    say("=" * 60)
    for path in outputs:
        say(f"📁 {path}")
    say(f"🕒 Wall time: {elapsed:.2f}s")
    say("=" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
