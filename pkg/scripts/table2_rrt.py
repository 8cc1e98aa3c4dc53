"""Min-snap RRT* against the straight-line baseline in the shipped arena."""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from splinetraj.bench import bench_rrt
from splinetraj.cli import write_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--max-iters", type=int, default=150)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/rrt.csv"))
    args = ap.parse_args()
    rows = bench_rrt(args.trials, args.max_iters, args.seed)
    keys = list(rows[0])
    write_csv(args.out, keys, ([r[k] for k in keys] for r in rows))
    both = [
        t
        for t in range(args.trials)
        if all(r["reached"] for r in rows if r["trial"] == t)
    ]
    for method in ("minsnap", "euclidean"):
        mine = [r for r in rows if r["method"] == method]
        snap = np.mean([r["total_snap"] for r in mine if r["trial"] in both]) if both else float("nan")
        wall = np.mean([r["wall_ms"] for r in mine])
        free = sum(r["recheck_free"] for r in mine if r["reached"])
        reached = sum(r["reached"] for r in mine)
        print(f"{method:>9}: mean snap {snap:8.3f}  mean wall {wall:10.2f} ms  reached {reached}  recheck free {free}")
    print(f"snap means over the {len(both)} trials where both methods reached the goal")


if __name__ == "__main__":
    main()
