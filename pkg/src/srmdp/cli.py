"""Parameter planning, benchmark runs with CSV output, and memory accounting.

Example::

    python -m srmdp --dim 4 --steps 5 10 --basis lp0 --schedule table5 --runs 100 --out lp0_d4.csv
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .metrics import compute_mse
from .model import make_benchmark
from .regression import LP0, LP1, BasisSpec
from .solver import SrmdpConfig, resolve_workers, save_table
from .stratification import StratGrid

log = logging.getLogger(__name__)

CSV_HEADER = ("N", "dt", "cells_per_dim", "K", "M", "mse_y_max", "mse_y_av", "mse_z_av",
              "wall_seconds", "runs", "seed")

# rule -> (basis, cells_per_dim(d, N), sims(d, N))
SCHEDULES: dict[str, tuple[str, Callable[[int, int], float], Callable[[int, int], int]]] = {
    "table5": (LP0, lambda d, N: 4.0 * math.sqrt(N), lambda d, N: N * N),
    "table6": (LP0, lambda d, N: math.sqrt(N), lambda d, N: N * N),
    "table8": (LP1, lambda d, N: 3.0 * math.sqrt(d * math.sqrt(N)) - 5, lambda d, N: (d + 1) * N * N),
    "table9": (LP1, lambda d, N: 1.5 * math.sqrt(d * math.sqrt(N)) - 3, lambda d, N: (d + 1) * N * N),
}
EXPLICIT = "explicit"

# floor of a quantity that is an exact integer in real arithmetic (e.g. 4 sqrt(4))
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class PlanRow:
    N: int
    cells_per_dim: int
    K: int
    M: int
    L: float = 6.5


@dataclass(frozen=True)
class ExperimentPlan:
    d: int
    T: float
    basis: str
    rows: tuple[PlanRow, ...]
    runs: int = 100
    seed: int = 0
    workers: int = 1
    mu: float = 1.0
    bounded: bool = True

    def __post_init__(self):
        if self.basis not in (LP0, LP1):
            raise ValueError(f"basis must be 'lp0' or 'lp1', got {self.basis!r}")
        if not self.rows:
            raise ValueError("plan has no rows")
        for row in self.rows:
            if row.K != row.cells_per_dim ** self.d:
                raise ValueError(f"K={row.K} != cells_per_dim^d = {row.cells_per_dim ** self.d}")
        if list(self.rows) != sorted(self.rows, key=lambda r: r.N):
            raise ValueError("plan rows must be sorted by N")
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")

    def config(self, row: PlanRow) -> SrmdpConfig:
        grid = StratGrid(self.d, row.cells_per_dim, row.L, bounded=self.bounded)
        return SrmdpConfig(N=row.N, grid=grid, M=row.M,
                           basis=BasisSpec(self.basis, self.d), seed=self.seed,
                           workers=self.workers, mu=self.mu)


def plan_parameters(d: int, N: int, basis: str, rule: str, cells: Optional[int] = None,
                    sims: Optional[int] = None) -> tuple[int, int, int]:
    """``(#C, K, M)`` for one time-step count under a schedule rule."""
    if d < 1 or N < 1:
        raise ValueError(f"need d >= 1 and N >= 1, got d={d}, N={N}")
    if rule == EXPLICIT:
        if cells is None or sims is None:
            raise ValueError("the explicit schedule needs both cells and sims")
        C, M = int(cells), int(sims)
    else:
        if rule not in SCHEDULES:
            raise ValueError(f"unknown schedule {rule!r}; choose from {sorted(SCHEDULES) + [EXPLICIT]}")
        rule_basis, cells_fn, sims_fn = SCHEDULES[rule]
        if basis != rule_basis:
            raise ValueError(f"schedule {rule} is defined for {rule_basis}, not {basis}")
        C = math.floor(cells_fn(d, N) + _FLOOR_EPS)
        M = int(sims_fn(d, N))
    if C < 1:
        raise ValueError(f"schedule {rule} gives cells_per_dim={C} < 1 at d={d}, N={N}")
    if M < 1:
        raise ValueError(f"schedule {rule} gives M={M} < 1 at d={d}, N={N}")
    return C, C ** d, M


def bound_for(N: int, L, mu: float = 1.0) -> float:
    """Box half-width: a number, or ``"log"`` for ``log(N) / mu``."""
    if isinstance(L, str):
        if L != "log":
            L = float(L)
        elif N < 2:
            raise ValueError("the log(N)/mu box needs N >= 2")
        else:
            return math.log(N) / mu
    L = float(L)
    if not (math.isfinite(L) and L > 0):
        raise ValueError(f"box half-width must be positive, got {L}")
    return L


def make_plan(d: int, steps: Sequence[int], basis: str, rule: str, cells=None, sims=None,
              T: float = 1.0, runs: int = 100, seed: int = 0, workers: int = 1,
              L=6.5, mu: float = 1.0, bounded: bool = True) -> ExperimentPlan:
    """Plan over several step counts; ``cells``/``sims`` may be scalars or one value per step."""
    steps = sorted(int(n) for n in steps)

    def per_row(v, j):
        if v is None or np.isscalar(v):
            return v
        if len(v) == 1:
            return v[0]
        if len(v) != len(steps):
            raise ValueError(f"expected one value per step count ({len(steps)}), got {len(v)}")
        return v[j]

    rows = []
    for j, N in enumerate(steps):
        C, K, M = plan_parameters(d, N, basis, rule, per_row(cells, j), per_row(sims, j))
        rows.append(PlanRow(N, C, K, M, bound_for(N, L, mu)))
    return ExperimentPlan(d=d, T=T, basis=basis, rows=tuple(rows), runs=runs, seed=seed,
                          workers=workers, mu=mu, bounded=bounded)


@dataclass(frozen=True)
class RowResult:
    row: PlanRow
    mse: tuple[float, float, float]
    wall_seconds: float
    error: Optional[str] = None


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def run_experiment(plan: ExperimentPlan, out=None, problem_factory=make_benchmark,
                   timing: bool = True, snapshot: Optional[str] = None) -> list[RowResult]:
    """Solve every plan row ``plan.runs`` times and write one CSV row each.

    A row whose solve raises is reported with ``nan`` indicators and the
    remaining rows still run.  With ``timing=False`` the wall-clock column is
    ``nan`` so that output is byte-identical across repeats.  ``snapshot``
    saves run 0's coefficient table per row (``.N<steps>`` is appended when
    the plan has several rows).
    """
    problem, analytic = problem_factory(plan.d, plan.T)
    writer = csv.writer(out, lineterminator="\n") if out is not None else None
    if writer:
        writer.writerow(CSV_HEADER)
    results = []
    for row in plan.rows:
        started = time.perf_counter()
        try:
            config = plan.config(row)
            on_table = None
            if snapshot:
                path = snapshot if len(plan.rows) == 1 else f"{snapshot}.N{row.N}"

                def on_table(run, table, path=path):
                    if run == 0:
                        save_table(table, path)

            report = compute_mse(problem, analytic, config, plan.runs, workers=plan.workers,
                                 on_table=on_table)
            result = RowResult(row, report.as_tuple(), time.perf_counter() - started)
        except Exception as exc:  # noqa: BLE001 - a failing row must not stop the plan
            log.error("row N=%d failed: %s", row.N, exc)
            result = RowResult(row, (math.nan,) * 3, time.perf_counter() - started, str(exc))
        results.append(result)
        if writer:
            wall = result.wall_seconds if timing else math.nan
            writer.writerow([row.N, repr(plan.T / row.N), row.cells_per_dim, row.K, row.M,
                             *(_fmt(v) for v in result.mse), _fmt(wall), plan.runs, plan.seed])
            out.flush()
    return results


@dataclass(frozen=True)
class MemoryReport:
    coeff_bytes: int
    per_worker_transient_bytes: int
    float_width: int
    totals: dict  # worker count -> coeff_bytes + workers * per_worker_transient_bytes

    @property
    def coeff_gib(self) -> float:
        return self.coeff_bytes / 2 ** 30


def coefficient_bytes(N: int, K: int, d: int, q: int, basis: str, float_width: int = 4) -> int:
    spec = BasisSpec(basis, d)
    return N * K * (spec.dim_y + q * spec.dim_z_per_component) * float_width


def transient_bytes(M: int, d: int, q: int, basis: str, float_width: int = 4) -> int:
    """One worker's scratch: the ``M x (d+1)`` design (LP1) plus ``(x, dW, y_next, B)`` per simulation."""
    design = M * (d + 1) * float_width if basis == LP1 else 0
    return design + M * (d + q + 2) * float_width


def memory_report(plan: ExperimentPlan, row: int = -1, float_width: int = 4, q: Optional[int] = None) -> MemoryReport:
    """Closed-form storage for one plan row (the largest by default); nothing is allocated."""
    r = plan.rows[row]
    q = plan.d if q is None else q
    coeff = coefficient_bytes(r.N, r.K, plan.d, q, plan.basis, float_width)
    transient = transient_bytes(r.M, plan.d, q, plan.basis, float_width)
    workers = sorted({1, max(1, plan.workers)})
    return MemoryReport(coeff, transient, float_width, {w: coeff + w * transient for w in workers})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srmdp", description="Stratified regression BSDE benchmark.")
    p.add_argument("--dim", type=int, required=True, help="space dimension d (= q)")
    p.add_argument("--horizon", type=float, default=1.0, help="time horizon T")
    p.add_argument("--steps", type=int, nargs="+", required=True, help="time-step counts N")
    p.add_argument("--basis", choices=(LP0, LP1), help="default: the schedule's basis, lp0 if explicit")
    p.add_argument("--cells", type=int, nargs="+", help="cells per dimension (explicit schedule)")
    p.add_argument("--sims", type=int, nargs="+", help="simulations per stratum (explicit schedule)")
    p.add_argument("--schedule", choices=sorted(SCHEDULES) + [EXPLICIT], default="table5")
    p.add_argument("--runs", type=int, default=100, help="independent runs per row")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1, help="0 = all cores; SRMDP_WORKERS overrides")
    p.add_argument("--bound-L", default="6.5",
                   help="half-width of the stratified box, or 'log' for log(N)/mu")
    p.add_argument("--exterior", choices=("zero", "absorb"), default="zero",
                   help="outside the box: estimates vanish (zero) or the edge cells extend to infinity (absorb)")
    p.add_argument("--mu", type=float, default=1.0, help="logistic scale parameter")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--snapshot", help="save run 0's coefficient table here")
    p.add_argument("--memory-report", action="store_true",
                   help="print storage estimates for each row and exit")
    p.add_argument("--float-width", type=int, default=4, choices=(4, 8),
                   help="bytes per stored number in the memory report")
    p.add_argument("--no-timing", action="store_true", help="write nan for wall_seconds")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    basis = args.basis or (SCHEDULES[args.schedule][0] if args.schedule in SCHEDULES else LP0)
    try:
        plan = make_plan(args.dim, args.steps, basis, args.schedule, args.cells, args.sims,
                         T=args.horizon, runs=args.runs, seed=args.seed,
                         workers=resolve_workers(args.workers), L=args.bound_L, mu=args.mu,
                         bounded=args.exterior == "zero")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.memory_report:
        print("N,cells_per_dim,K,M,coeff_bytes,coeff_GiB,transient_bytes_per_worker,workers,total_bytes")
        for j, row in enumerate(plan.rows):
            rep = memory_report(plan, j, args.float_width)
            for w, total in rep.totals.items():
                print(f"{row.N},{row.cells_per_dim},{row.K},{row.M},{rep.coeff_bytes},"
                      f"{rep.coeff_gib:.4f},{rep.per_worker_transient_bytes},{w},{total}")
        return 0
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            results = run_experiment(plan, fh, timing=not args.no_timing, snapshot=args.snapshot)
    else:
        results = run_experiment(plan, sys.stdout, timing=not args.no_timing, snapshot=args.snapshot)
    return 1 if any(r.error for r in results) else 0


if __name__ == "__main__":
    raise SystemExit(main())
