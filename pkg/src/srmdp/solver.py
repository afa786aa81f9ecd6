"""Stratified regression backward iteration.

For every time index ``i = N-1, ..., 0`` and every stratum ``k`` a fresh
cloud of ``M`` simulations starts inside the stratum, is propagated to the
horizon, and its responses are regressed on the local basis: first the ``z``
block, then the ``y`` block (which evaluates the driver at time ``i`` with the
freshly fitted ``z``).  Strata of one time step are independent and are
spread block-cyclically over a thread pool; the compiled kernel releases the
GIL.  A time step only reads table entries of later time steps.

Only ``(x_i, dW_i, y_{i+1}(x_{i+1}), B)`` is kept per simulation, where
``B = g(x_N) + sum_{j>i} f_j(...) dt``; paths are streamed, never stored.
"""

from __future__ import annotations

import logging
import math
import os
import struct
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from . import rng as _rng
from .model import Bounds, BSDEProblem, compute_bounds
from .regression import (LP1, BasisSpec, CoefficientBlock, apply_qt, back_substitute, clamp,
                         eval_basis, fill_design, householder_inplace, shifted_mean)
from .stratification import StratGrid, locate_flat, point_from_masses, stratum_masses

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"SRMD"
SNAPSHOT_VERSION = 1
# magic, version, d, q, N, K, basis kind, mu, L, #C, seed, bounded
_HEADER = struct.Struct("<4sIIIIQIddIQI")


@dataclass(frozen=True)
class SrmdpConfig:
    N: int
    grid: StratGrid
    M: int
    basis: BasisSpec
    seed: int = 0
    workers: int = 1
    mu: float = 1.0
    run: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.grid.d != self.basis.d:
            raise ValueError(f"grid dimension {self.grid.d} != basis dimension {self.basis.d}")
        if self.M < self.basis.dim_y:
            raise ValueError(
                f"M={self.M} simulations cannot determine {self.basis.dim_y} coefficients per stratum")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")


@dataclass
class CoefficientTable:
    """Raw regression coefficients; truncation happens on evaluation."""

    problem: BSDEProblem
    N: int
    grid: StratGrid
    basis: BasisSpec
    mu: float
    seed: int
    bounds: Bounds
    y: np.ndarray                    # (N, K, dim)
    z: np.ndarray                    # (N, K, q, dim)
    config: Optional[SrmdpConfig] = None
    downgrades: int = 0
    stats: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, problem: BSDEProblem, config: SrmdpConfig, bounds: Bounds) -> "CoefficientTable":
        K, P = config.grid.K, config.basis.dim_y
        return cls(problem=problem, N=config.N, grid=config.grid, basis=config.basis, mu=config.mu,
                   seed=config.seed, bounds=bounds, config=config,
                   y=np.zeros((config.N, K, P)), z=np.zeros((config.N, K, problem.q, P)))

    @property
    def dt(self) -> float:
        return self.problem.T / self.N

    def block(self, i: int, k: int) -> CoefficientBlock:
        return CoefficientBlock(self.y[i, k].copy(), self.z[i, k].copy())

    def tobytes(self) -> bytes:
        return self.y.tobytes() + self.z.tobytes()


@dataclass
class SimulationCloud:
    x: np.ndarray         # (M, d) start points in the stratum
    dw: np.ndarray        # (M, q) first Brownian increment
    y_next: np.ndarray    # (M,) truncated y_{i+1}(x_{i+1})
    base: np.ndarray      # (M,) g(x_N) + sum_{j>i} f_j(...) dt


class Workspace:
    """Scratch buffers owned by one worker; sized for a single stratum."""

    def __init__(self, M: int, d: int, q: int, lp1: bool):
        self.xs = np.empty((M, d))
        self.dws = np.empty((M, q))
        self.ynext = np.empty(M)
        self.base = np.empty(M)
        self.A = np.empty((M, d + 1) if lp1 else (1, 1))
        self.resp = np.empty(M)
        self.beta = np.empty(d + 1)
        self.x = np.empty(d)
        self.xn = np.empty(d)
        self.dw = np.empty(q)
        self.zb = np.empty(q)
        self.u = np.empty(max(d, 4))
        self.scratch = np.empty(4)

    @property
    def nbytes(self) -> int:
        return sum(v.nbytes for v in vars(self).values() if isinstance(v, np.ndarray))


# -- compiled kernels -------------------------------------------------------------

@nb.njit(nogil=True)
def _eval_y(ycoef, i, x, lp1, Cy, cells, L, delta, breaks):
    k = locate_flat(x, cells, L, delta, breaks)
    if k < 0:
        return 0.0
    return clamp(eval_basis(ycoef[i, k], x, lp1), Cy)


@nb.njit(nogil=True)
def _eval_z(zcoef, i, x, lp1, Cz, cells, L, delta, breaks, out):
    k = locate_flat(x, cells, L, delta, breaks)
    for l in range(out.shape[0]):
        out[l] = 0.0 if k < 0 else clamp(eval_basis(zcoef[i, k, l], x, lp1), Cz)


@nb.njit(nogil=True)
def _build_cloud(g, f, step, i, k, N, dt, mu, cells, L, delta, breaks, lp1, k0, k1,
                 ycoef, zcoef, Cy, Cz, xs, dws, ynext, base, x, xn, dw, zb, u, scratch):
    M, d = xs.shape
    q = dws.shape[1]
    sqdt = math.sqrt(dt)
    masses = np.empty((6, d))
    stratum_masses(k, mu, cells, breaks, masses)
    for m in range(M):
        _rng.start_uniforms(k0, k1, i, k, m, d, scratch, u)
        point_from_masses(u, mu, masses, x)
        for l in range(d):
            xs[m, l] = x[l]
        yn = 0.0
        acc = 0.0
        kn = k
        for j in range(i, N):
            if j > i:
                for l in range(d):
                    x[l] = xn[l]
                # the stratum of x_j was found when y_j was evaluated
                for l in range(q):
                    zb[l] = 0.0 if kn < 0 else clamp(eval_basis(zcoef[j, kn, l], x, lp1), Cz)
            _rng.step_normals(k0, k1, i, k, m, d, j - i, q, scratch, dw)
            for l in range(q):
                dw[l] *= sqdt
            step(j * dt, x, dw, dt, xn)
            if j + 1 == N:
                yn = g(xn)
            else:
                kn = locate_flat(xn, cells, L, delta, breaks)
                yn = 0.0 if kn < 0 else clamp(eval_basis(ycoef[j + 1, kn], xn, lp1), Cy)
            if j == i:
                for l in range(q):
                    dws[m, l] = dw[l]
                ynext[m] = yn
            else:
                acc += f(j, x, yn, zb) * dt
        base[m] = yn + acc


@nb.njit(nogil=True)
def _regress(f, i, dt, lp1, Cz, xs, dws, ynext, base, A, resp, beta, zb, ycoef_ik, zcoef_ik):
    """Fit the z block then the y block of one stratum; returns 1 if LP1 fell back to LP0."""
    M, d = xs.shape
    q = dws.shape[1]
    P = ycoef_ik.shape[0]
    use_qr = lp1
    downgraded = 0
    if lp1:
        fill_design(xs, A)
        _, deficient = householder_inplace(A, beta)
        if deficient:
            use_qr = False
            downgraded = 1
    for l in range(q):
        for m in range(M):
            resp[m] = base[m] * dws[m, l] / dt
        if use_qr:
            apply_qt(A, beta, resp)
            back_substitute(A, resp, zcoef_ik[l])
        else:
            zcoef_ik[l, 0] = shifted_mean(resp, M)
            for c in range(1, P):
                zcoef_ik[l, c] = 0.0
    for m in range(M):
        x = xs[m]
        for l in range(q):
            zb[l] = clamp(eval_basis(zcoef_ik[l], x, lp1), Cz)
        resp[m] = base[m] + f(i, x, ynext[m], zb) * dt
    if use_qr:
        apply_qt(A, beta, resp)
        back_substitute(A, resp, ycoef_ik)
    else:
        ycoef_ik[0] = shifted_mean(resp, M)
        for c in range(1, P):
            ycoef_ik[c] = 0.0
    return downgraded


@nb.njit(nogil=True)
def _solve_strata(g, f, step, strata, i, N, dt, mu, cells, L, delta, breaks, lp1, k0, k1,
                  ycoef, zcoef, Cy, Cz, xs, dws, ynext, base, A, resp, beta, x, xn, dw, zb, u, scratch):
    downgrades = 0
    for k in strata:
        _build_cloud(g, f, step, i, k, N, dt, mu, cells, L, delta, breaks, lp1, k0, k1,
                     ycoef, zcoef, Cy, Cz, xs, dws, ynext, base, x, xn, dw, zb, u, scratch)
        downgrades += _regress(f, i, dt, lp1, Cz, xs, dws, ynext, base, A, resp, beta, zb,
                               ycoef[i, k], zcoef[i, k])
    return downgrades


@nb.njit(nogil=True)
def _eval_many_y(ycoef, i, X, lp1, Cy, cells, L, delta, breaks, out):
    for n in range(X.shape[0]):
        out[n] = _eval_y(ycoef, i, X[n], lp1, Cy, cells, L, delta, breaks)


@nb.njit(nogil=True)
def _eval_many_z(zcoef, i, X, lp1, Cz, cells, L, delta, breaks, out):
    for n in range(X.shape[0]):
        _eval_z(zcoef, i, X[n], lp1, Cz, cells, L, delta, breaks, out[n])


@nb.njit(nogil=True)
def _eval_many_g(g, X, out):
    for n in range(X.shape[0]):
        out[n] = g(X[n])


# -- orchestration -------------------------------------------------------------

def _kernel_args(table: CoefficientTable, config: SrmdpConfig):
    grid = config.grid
    k0, k1 = _rng.derive_key(config.seed, config.run, _rng.SOLVER_DOMAIN)
    return dict(N=config.N, dt=table.dt, mu=config.mu, cells=grid.cells_per_dim, L=grid.L,
                delta=grid.delta, breaks=grid.breakpoints, lp1=config.basis.kind == LP1, k0=k0, k1=k1)


def _run_strata(problem, config, table, i, strata, trace=False) -> tuple[int, int]:
    if trace:
        before, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
    ws = Workspace(config.M, problem.d, problem.q, config.basis.kind == LP1)
    a = _kernel_args(table, config)
    downgrades = _solve_strata(
        problem.g, problem.f, problem.step, strata, i, a["N"], a["dt"], a["mu"], a["cells"], a["L"],
        a["delta"], a["breaks"], a["lp1"], a["k0"], a["k1"], table.y, table.z,
        table.bounds.C_y, table.bounds.C_z, ws.xs, ws.dws, ws.ynext, ws.base, ws.A, ws.resp,
        ws.beta, ws.x, ws.xn, ws.dw, ws.zb, ws.u, ws.scratch)
    peak = 0
    if trace:
        _, top = tracemalloc.get_traced_memory()
        peak = top - before
    return int(downgrades), peak


def resolve_workers(workers: int) -> int:
    env = os.environ.get("SRMDP_WORKERS")
    if env:
        workers = int(env)
    if workers == 0:
        workers = os.cpu_count() or 1
    return max(1, workers)


def solve(problem: BSDEProblem, config: SrmdpConfig, trace_memory: bool = False) -> CoefficientTable:
    """Run the backward iteration and return the coefficient table.

    The result is a deterministic function of ``(problem, config)`` whatever
    ``config.workers`` is.  ``trace_memory`` runs the strata sequentially
    under :mod:`tracemalloc` and records the peak transient allocation of a
    worker in ``table.stats["peak_transient_bytes"]``.
    """
    if config.grid.d != problem.d:
        raise ValueError(f"grid dimension {config.grid.d} != problem dimension {problem.d}")
    bounds = compute_bounds(problem, config.N)
    table = CoefficientTable.empty(problem, config, bounds)
    K = config.grid.K
    workers = min(config.workers, K)
    # block-cyclic assignment: worker w owns strata w, w + W, w + 2W, ...
    assignment = [np.arange(w, K, workers, dtype=np.int64) for w in range(workers)]
    downgrades = 0
    peak = 0
    started = False
    if trace_memory and not tracemalloc.is_tracing():
        tracemalloc.start()
        started = True
    try:
        if workers == 1 or trace_memory:
            for i in range(config.N - 1, -1, -1):
                for strata in assignment:
                    n, p = _run_strata(problem, config, table, i, strata, trace_memory)
                    downgrades += n
                    peak = max(peak, p)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for i in range(config.N - 1, -1, -1):
                    # barrier: time i reads only times > i
                    results = list(pool.map(lambda s: _run_strata(problem, config, table, i, s), assignment))
                    downgrades += sum(r[0] for r in results)
    finally:
        if started:
            tracemalloc.stop()
    if downgrades:
        log.warning("%d stratum regressions fell back to LP0 (rank-deficient design)", downgrades)
    table.downgrades = downgrades
    table.stats["workspace_bytes"] = Workspace(config.M, problem.d, problem.q, config.basis.kind == LP1).nbytes
    if trace_memory:
        table.stats["peak_transient_bytes"] = peak
    return table


def build_cloud(problem: BSDEProblem, config: SrmdpConfig, table: CoefficientTable, i: int, k: int) -> SimulationCloud:
    """Simulation cloud of stratum ``k`` at time ``i``; needs the table filled for times ``> i``."""
    if not 0 <= i < config.N:
        raise ValueError(f"time index {i} out of range [0, {config.N})")
    ws = Workspace(config.M, problem.d, problem.q, False)
    a = _kernel_args(table, config)
    _build_cloud(problem.g, problem.f, problem.step, i, k, a["N"], a["dt"], a["mu"], a["cells"], a["L"],
                 a["delta"], a["breaks"], a["lp1"], a["k0"], a["k1"], table.y, table.z,
                 table.bounds.C_y, table.bounds.C_z, ws.xs, ws.dws, ws.ynext, ws.base,
                 ws.x, ws.xn, ws.dw, ws.zb, ws.u, ws.scratch)
    return SimulationCloud(ws.xs, ws.dws, ws.ynext, ws.base)


def regress_stratum(problem: BSDEProblem, cloud: SimulationCloud, basis: BasisSpec, bounds: Bounds,
                    i: int, N: int) -> CoefficientBlock:
    """Fit the z block, then the y block, of one stratum from its cloud."""
    M = cloud.x.shape[0]
    if M < basis.dim_y:
        raise ValueError(f"M={M} simulations cannot determine {basis.dim_y} coefficients")
    lp1 = basis.kind == LP1
    d, q = problem.d, problem.q
    y = np.zeros(basis.dim_y)
    z = np.zeros((q, basis.dim_y))
    downgraded = _regress(problem.f, i, problem.T / N, lp1, bounds.C_z,
                          np.ascontiguousarray(cloud.x), np.ascontiguousarray(cloud.dw),
                          np.ascontiguousarray(cloud.y_next), np.ascontiguousarray(cloud.base),
                          np.empty((M, d + 1) if lp1 else (1, 1)), np.empty(M), np.empty(d + 1),
                          np.empty(q), y, z)
    return CoefficientBlock(y, z, bool(downgraded))


def _points(table: CoefficientTable, x) -> tuple[np.ndarray, bool]:
    X = np.ascontiguousarray(x, dtype=float)
    single = X.ndim == 1
    return X.reshape(-1, table.problem.d), single


def evaluate_y(table: CoefficientTable, i: int, x):
    """Truncated ``y_i`` at one point ``(d,)`` or many ``(n, d)``; ``i = N`` returns ``g``."""
    if not 0 <= i <= table.N:
        raise ValueError(f"time index {i} out of range [0, {table.N}]")
    X, single = _points(table, x)
    out = np.empty(X.shape[0])
    if i == table.N:
        _eval_many_g(table.problem.g, X, out)
    else:
        g = table.grid
        _eval_many_y(table.y, i, X, table.basis.kind == LP1, table.bounds.C_y, g.cells_per_dim,
                     g.L, g.delta, g.breakpoints, out)
    return float(out[0]) if single else out


def evaluate_z(table: CoefficientTable, i: int, x):
    """Componentwise truncated ``z_i``; undefined at the horizon."""
    if i == table.N:
        raise ValueError("z is not defined at the terminal time index")
    if not 0 <= i < table.N:
        raise ValueError(f"time index {i} out of range [0, {table.N})")
    X, single = _points(table, x)
    out = np.empty((X.shape[0], table.problem.q))
    g = table.grid
    _eval_many_z(table.z, i, X, table.basis.kind == LP1, table.bounds.C_z, g.cells_per_dim,
                 g.L, g.delta, g.breakpoints, out)
    return out[0] if single else out


# -- snapshot -----------------------------------------------------------------------

def save_table(table: CoefficientTable, path) -> None:
    """Binary snapshot: fixed header then little-endian float64 ``(i, k, [y | z])`` records."""
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, table.problem.d, table.problem.q, table.N,
                          table.grid.K, 0 if table.basis.kind != LP1 else 1, table.mu, table.grid.L,
                          table.grid.cells_per_dim, table.seed, int(table.grid.bounded))
    N, K, P = table.y.shape
    records = np.concatenate([table.y, table.z.reshape(N, K, -1)], axis=2)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.astype("<f8").tobytes())


def load_table(path, problem: BSDEProblem) -> CoefficientTable:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("snapshot truncated")
    magic, version, d, q, N, K, kind, mu, L, cells, seed, bounded = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"not a coefficient snapshot (magic {magic!r})")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    if (d, q) != (problem.d, problem.q):
        raise ValueError(f"snapshot is for d={d}, q={q}; problem has d={problem.d}, q={problem.q}")
    grid = StratGrid(d, cells, L, bounded=bool(bounded))
    if grid.K != K:
        raise ValueError(f"inconsistent header: K={K} but #C^d={grid.K}")
    basis = BasisSpec(LP1 if kind == 1 else "lp0", d)
    P = basis.dim_y
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != N * K * P * (1 + q):
        raise ValueError("snapshot payload size does not match header")
    records = data.reshape(N, K, P * (1 + q)).astype(float)
    return CoefficientTable(problem=problem, N=N, grid=grid, basis=basis, mu=mu, seed=seed,
                            bounds=compute_bounds(problem, N), y=records[:, :, :P].copy(),
                            z=records[:, :, P:].reshape(N, K, q, P).copy())
