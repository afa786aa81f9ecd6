"""Coefficient and per-worker storage along a schedule (nothing is allocated).

    python scripts/memory_table.py --dim 6 --schedule explicit --steps 50 --cells 14 --sims 2500
"""

import argparse

from srmdp.cli import SCHEDULES, make_plan, memory_report


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--schedule", default="table5", choices=sorted(SCHEDULES) + ["explicit"])
    p.add_argument("--basis", default=None, help="defaults to the schedule's basis")
    p.add_argument("--steps", type=int, nargs="+", default=[5, 10, 20, 50])
    p.add_argument("--cells", type=int, nargs="+")
    p.add_argument("--sims", type=int, nargs="+")
    p.add_argument("--float-width", type=int, default=4)
    p.add_argument("--workers", type=int, default=24)
    args = p.parse_args()

    basis = args.basis or (SCHEDULES[args.schedule][0] if args.schedule in SCHEDULES else "lp0")
    plan = make_plan(args.dim, args.steps, basis, args.schedule, args.cells, args.sims, workers=args.workers)
    print(f"{'N':>4} {'#C':>4} {'K':>10} {'M':>7} {'coeff GiB':>11} {'worker KiB':>11} {'total GiB':>10}")
    for j, row in enumerate(plan.rows):
        rep = memory_report(plan, j, args.float_width)
        total = rep.totals[max(rep.totals)]
        print(f"{row.N:4d} {row.cells_per_dim:4d} {row.K:10d} {row.M:7d} {rep.coeff_gib:11.4f} "
              f"{rep.per_worker_transient_bytes / 1024:11.1f} {total / 2 ** 30:10.4f}")


if __name__ == "__main__":
    main()
