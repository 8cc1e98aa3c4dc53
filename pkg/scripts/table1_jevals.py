"""Mean number of cost evaluations per optimizer method (exact, finite difference, random)."""

from __future__ import annotations

import argparse
from pathlib import Path

from splinetraj.bench import JevalsConfig, bench_jevals
from splinetraj.cli import write_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--l", type=int, nargs="+", default=[6, 8, 10])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--rtol", type=float, default=JevalsConfig.rtol)
    ap.add_argument("--budget", type=int, default=JevalsConfig.budget)
    ap.add_argument("--out", type=Path, default=Path("results/jevals.csv"))
    args = ap.parse_args()
    rows = bench_jevals(args.l, args.trials, JevalsConfig(rtol=args.rtol, budget=args.budget))
    write_csv(args.out, ["l", "method", "mean_J_evals", "reached_fraction"], rows)
    print(f"{'l':>3} {'exact':>8} {'findiff':>8} {'random':>8}")
    for l in args.l:
        means = {r[1]: r[2] for r in rows if r[0] == l}
        print(f"{l:>3} {means['exact']:8.2f} {means['findiff']:8.2f} {means['random']:8.2f}")


if __name__ == "__main__":
    main()
