"""Solver wall time against segment count, with the fitted log-log slope."""

from __future__ import annotations

import argparse
from pathlib import Path

from splinetraj.bench import bench_scaling, loglog_slope
from splinetraj.cli import write_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--pmin", type=int, default=6, help="smallest l is 2**pmin")
    ap.add_argument("--pmax", type=int, default=13)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("results/scaling.csv"))
    args = ap.parse_args()
    rows = bench_scaling(args.k, [2**p for p in range(args.pmin, args.pmax + 1)], args.reps)
    write_csv(args.out, ["l", "median_ms", "reps"], rows)
    for l, ms, _ in rows:
        print(f"l={l:5d}  {ms:9.3f} ms  ({1e3 * ms / l:.2f} us per segment)")
    print(f"log-log slope {loglog_slope([r[0] for r in rows], [r[1] for r in rows]):.3f}")


if __name__ == "__main__":
    main()
