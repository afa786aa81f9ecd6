"""Log mean-squared-error indicators against an analytic solution.

For each independent run ``r`` and time index ``i`` one evaluation point
``R[i, r]`` is drawn from the logistic reference law (from a stream domain
disjoint from the solver's).  With ``e_y[r, i]`` and ``e_z[r, i]`` the squared
errors (``z`` uses the squared Euclidean norm over its components):

* ``mse_y_max = ln(max_i sum_r e_y[r, i] / runs)``
* ``mse_y_av  = ln(sum_{r,i} e_y[r, i] / (runs N))``
* ``mse_z_av  = ln(sum_{r,i} e_z[r, i] / (runs N))``
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng as _rng
from .model import AnalyticSolution, BSDEProblem
from .solver import SrmdpConfig, evaluate_y, evaluate_z, resolve_workers, solve
from .stratification import LogisticMeasure, sample_logistic


@dataclass(frozen=True)
class MseReport:
    mse_y_max: float
    mse_y_av: float
    mse_z_av: float
    runs: int
    config: SrmdpConfig | None = None

    def as_tuple(self) -> tuple[float, float, float]:
        return self.mse_y_max, self.mse_y_av, self.mse_z_av


def _log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def aggregate(err_y, err_z) -> tuple[float, float, float]:
    """Indicators from squared errors of shape ``(runs, N)``; runs are summed in order."""
    ey = np.asarray(err_y, dtype=float)
    ez = np.asarray(err_z, dtype=float)
    if ey.ndim != 2 or ey.shape != ez.shape or ey.shape[0] < 1:
        raise ValueError(f"expected matching (runs, N) arrays, got {ey.shape} and {ez.shape}")
    runs, N = ey.shape
    per_time = ey.sum(axis=0)
    return (_log(per_time.max() / runs),
            _log(per_time.sum() / (runs * N)),
            _log(ez.sum() / (runs * N)))


def eval_points(d: int, N: int, seed: int, run: int, mu: float = 1.0) -> np.ndarray:
    """``(N, d)`` logistic evaluation points for one run."""
    key = _rng.derive_key(seed, run, _rng.EVAL_DOMAIN)
    nb_blocks = (d + 3) // 4
    u = np.empty(4 * nb_blocks)
    block = np.empty(4)
    out = np.empty((N, d))
    for i in range(N):
        for b in range(nb_blocks):
            _rng.uniform_block(key[0], key[1], b, 0, 0, i, block)
            u[4 * b:4 * b + 4] = block
        out[i] = sample_logistic(LogisticMeasure(mu), u[:d])
    return out


def run_errors(problem: BSDEProblem, analytic: AnalyticSolution, config: SrmdpConfig,
               run: int, seed: int | None = None, on_table=None) -> tuple[np.ndarray, np.ndarray]:
    """Squared y and z errors at each time index for one independent run.

    ``on_table(run, table)`` is called with the fitted table if given.
    """
    seed = config.seed if seed is None else seed
    cfg = replace(config, run=run, seed=seed, workers=1)
    table = solve(problem, cfg)
    if on_table is not None:
        on_table(run, table)
    R = eval_points(problem.d, cfg.N, seed, run, cfg.mu)
    ey = np.empty(cfg.N)
    ez = np.empty(cfg.N)
    for i in range(cfg.N):
        ey[i] = (float(analytic.y(i, R[i], cfg.N)) - evaluate_y(table, i, R[i])) ** 2
        ez[i] = float(np.sum((np.asarray(analytic.z(i, R[i], cfg.N)) - evaluate_z(table, i, R[i])) ** 2))
    return ey, ez


def compute_mse(problem: BSDEProblem, analytic: AnalyticSolution, config: SrmdpConfig, runs: int,
                seed: int | None = None, workers: int | None = None, on_table=None) -> MseReport:
    """Run ``runs`` independent solves concurrently and aggregate their errors."""
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    workers = resolve_workers(config.workers if workers is None else workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: run_errors(problem, analytic, config, r, seed, on_table), range(runs)))
    else:
        results = [run_errors(problem, analytic, config, r, seed, on_table) for r in range(runs)]
    ey = np.array([r[0] for r in results])
    ez = np.array([r[1] for r in results])
    return MseReport(*aggregate(ey, ez), runs=runs, config=config)
