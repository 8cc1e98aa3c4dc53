"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema
import numpy as np

from .bench import JevalsConfig, bench_conditioning, bench_jevals, bench_scaling, loglog_slope
from .fixed_time import NumericalFailure, solve_dense_oracle, solve_fixed_time
from .multidim import FlatTrajectory, MultiDimProblem, solve_multidim
from .rrt_star import PlannerConfig, Rect, Workspace, plan, plan_euclidean_baseline
from .spline_core import InvalidInputError, TimeAllocation
from .variable_time import METHODS, OptimizerConfig, OptimizerTrace

log = logging.getLogger(__name__)

OUT_ENV = "SPLINETRAJ_OUT"

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

_PIN = {
    "type": "object",
    "properties": {
        "knot": {"type": "integer", "minimum": 0},
        "deriv": {"type": "integer", "minimum": 0},
        "value": {"type": "number"},
    },
    "required": ["knot", "deriv", "value"],
    "additionalProperties": False,
}
_PINS = {"type": "array", "items": _PIN}
_NUMBERS = {"type": "array", "items": {"type": "number"}, "minItems": 1}

PROBLEM_SCHEMA = {
    "type": "object",
    "properties": {
        "k": {"type": "integer", "minimum": 1},
        "pins": _PINS,
        "dimensions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "k": {"type": "integer", "minimum": 1},
                    "pins": _PINS,
                },
                "required": ["name", "k", "pins"],
                "additionalProperties": False,
            },
        },
        "times": {**_NUMBERS, "minItems": 2},
        "initial_deltas": _NUMBERS,
        "tau0": {"type": "number"},
        "mode": {"enum": ["fixed-total", "time-penalty"]},
        "total_time": {"type": "number", "exclusiveMinimum": 0},
        "kappa": {"type": "number", "minimum": 0},
        "metric": {"enum": ["euclidean", "duration"]},
        "max_iters": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer"},
    },
    "oneOf": [{"required": ["k", "pins"]}, {"required": ["dimensions"]}],
    "additionalProperties": False,
}

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_BOX = {
    "type": "object",
    "properties": {"min": _POINT, "max": _POINT},
    "required": ["min", "max"],
    "additionalProperties": False,
}

WORLD_SCHEMA = {
    "type": "object",
    "properties": {
        "bounds": {"type": "array", "items": _POINT, "minItems": 2, "maxItems": 2},
        "obstacles": {"type": "array", "items": _BOX},
        "start": _POINT,
        "goal": _BOX,
        "config": {
            "type": "object",
            "properties": {
                "max_iters": {"type": "integer", "minimum": 0},
                "near_radius": {"type": "number", "exclusiveMinimum": 0},
                "speed": {"type": "number", "exclusiveMinimum": 0},
                "collision_dt": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["bounds", "start"],
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# Input
# ---------------------------------------------------------------------------


def load_json(path: str | Path, schema: dict) -> dict[str, Any]:
    """Read, decode and validate a JSON document; errors carry the byte offset."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid UTF-8 at byte offset {exc.start}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise InvalidInputError(f"{path}: malformed JSON at byte offset {offset}: {exc.msg}") from None
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidInputError(f"{path}: schema violation at {where}: {exc.message}") from None
    return doc


def _dims(doc: dict) -> list[tuple[str, int, list]]:
    if "dimensions" in doc:
        return [(d["name"], d["k"], d["pins"]) for d in doc["dimensions"]]
    return [("x", doc["k"], doc["pins"])]


def _optimizer_config(doc: dict) -> OptimizerConfig:
    keys = ("mode", "total_time", "kappa", "metric", "max_iters", "seed")
    return OptimizerConfig(**{k: doc[k] for k in keys if k in doc})


def fixed_problem(doc: dict) -> MultiDimProblem:
    if "times" not in doc:
        raise InvalidInputError("fixed-time problem needs 'times'")
    return MultiDimProblem(tuple(_dims(doc)), TimeAllocation(doc["times"]))


def variable_problem(doc: dict) -> MultiDimProblem:
    if "initial_deltas" in doc:
        d0 = doc["initial_deltas"]
    elif "times" in doc:
        d0 = TimeAllocation(doc["times"]).d
    else:
        raise InvalidInputError("variable-time problem needs 'initial_deltas' or 'times'")
    return MultiDimProblem.from_durations(_dims(doc), d0, _optimizer_config(doc), float(doc.get("tau0", 0.0)))


def world_from_doc(doc: dict) -> tuple[Workspace, np.ndarray, PlannerConfig]:
    (x0, x1), (y0, y1) = doc["bounds"]
    ws = Workspace(
        Rect((x0, y0), (x1, y1)),
        tuple(Rect(tuple(o["min"]), tuple(o["max"])) for o in doc.get("obstacles", [])),
    )
    goal = doc.get("goal")
    cfg = PlannerConfig(
        goal=Rect(tuple(goal["min"]), tuple(goal["max"])) if goal else None, **doc.get("config", {})
    )
    return ws, np.asarray(doc["start"], dtype=np.float64), cfg


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _out_path(arg: str | None, default_name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUT_ENV, ".")) / default_name


def trajectory_rows(traj: FlatTrajectory, samples: int) -> tuple[list[str], np.ndarray]:
    """Rows at ``samples`` uniform times plus every knot, all derivatives 0..k-1."""
    if samples < 2:
        raise InvalidInputError("need at least two samples")
    t = traj.times.t
    tau = np.union1d(np.linspace(t[0], t[-1], samples), t)
    header, cols = ["t"], [tau]
    for name, s in zip(traj.names, traj.splines):
        for q in range(s.k):
            header.append(f"{name}_d{q}")
            cols.append(s.eval(tau, q))
    return header, np.column_stack(cols)


def write_trace(path: Path, trace: OptimizerTrace) -> None:
    write_csv(path, ["iter", "J", "step", "evals"], ((i, e.J, e.step, e.evals) for i, e in enumerate(trace.entries)))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fixed(args: argparse.Namespace) -> int:
    problem = fixed_problem(load_json(args.problem, PROBLEM_SCHEMA))
    subs = problem.problems_at(problem.times)
    sols = [solve_fixed_time(p) for p in subs]
    traj = FlatTrajectory(tuple(problem.names), tuple(s.spline for s in sols), sum(s.cost for s in sols))
    header, rows = trajectory_rows(traj, args.samples)
    write_csv(_out_path(args.out, "trajectory.csv"), header, rows)
    print(f"J = {fmt(traj.cost)}")
    if args.oracle:
        dev = max(float(np.max(np.abs(solve_dense_oracle(p).f_star - s.f_star))) for p, s in zip(subs, sols))
        print(f"oracle max deviation = {fmt(dev)}")
    return EXIT_OK


def cmd_variable(args: argparse.Namespace) -> int:
    problem = variable_problem(load_json(args.problem, PROBLEM_SCHEMA))
    traj, d_star, trace = solve_multidim(problem, args.method)
    header, rows = trajectory_rows(traj, args.samples)
    write_csv(_out_path(args.out, "trajectory.csv"), header, rows)
    if args.trace:
        write_trace(Path(args.trace), trace)
    print(f"J = {fmt(traj.cost)}")
    print("times = " + ",".join(fmt(v) for v in traj.times.t))
    print(f"iterations = {len(trace)}, J evaluations = {trace.evals}")
    return EXIT_OK


def _edges(fw) -> list[tuple]:
    return [
        (i, p, fw.points[i][0], fw.points[i][1], fw.points[p][0], fw.points[p][1])
        for i, p in enumerate(fw.parent)
        if p >= 0
    ]


def cmd_rrt(args: argparse.Namespace) -> int:
    ws, start, cfg = world_from_doc(load_json(args.world, WORLD_SCHEMA))
    if args.max_iters is not None:
        cfg = replace(cfg, max_iters=args.max_iters)
    out = Path(args.out_dir or os.environ.get(OUT_ENV, "."))
    methods = [("minsnap", plan)] + ([("euclidean", plan_euclidean_baseline)] if args.baseline else [])
    metrics = []
    edge_header = ["child", "parent", "child_x", "child_y", "parent_x", "parent_y"]
    for trial in range(args.trials):
        trial_cfg = replace(cfg, seed=cfg.seed + trial)
        for name, planner in methods:
            res = planner(ws, start, trial_cfg)
            metrics.append((trial, name, res.snap, 1e3 * res.wall_time))
            if trial == 0:
                write_csv(out / f"{name}_edges.csv", edge_header, _edges(res.framework))
                if res.trajectory is not None:
                    header, rows = trajectory_rows(res.trajectory, args.samples)
                    write_csv(out / f"{name}_trajectory.csv", header, rows)
    write_csv(out / "metrics.csv", ["trial", "method", "total_snap", "wall_ms"], metrics)
    for name, _ in methods:
        snaps = [m[2] for m in metrics if m[1] == name]
        print(f"{name}: mean total snap = {fmt(float(np.mean(snaps)))}")
    return EXIT_OK


def _geometric(lmin: int, lmax: int) -> list[int]:
    if lmin < 1 or lmax < lmin:
        raise InvalidInputError("need 1 <= lmin <= lmax")
    out, l = [], lmin
    while l <= lmax:
        out.append(l)
        l *= 2
    return out


def cmd_bench_scaling(args: argparse.Namespace) -> int:
    rows = bench_scaling(args.k, _geometric(args.lmin, args.lmax), args.reps, args.seed)
    write_csv(_out_path(args.out, "scaling.csv"), ["l", "median_ms", "reps"], rows)
    if len(rows) >= 2:
        print(f"log-log slope = {loglog_slope([r[0] for r in rows], [r[1] for r in rows]):.3f}")
    return EXIT_OK


def cmd_bench_jevals(args: argparse.Namespace) -> int:
    if args.trials < 1:
        raise InvalidInputError("trials must be >= 1")
    cfg = JevalsConfig(rtol=args.rtol, budget=args.budget)
    rows = bench_jevals(args.l, args.trials, cfg)
    write_csv(_out_path(args.out, "jevals.csv"), ["l", "method", "mean_J_evals", "reached_fraction"], rows)
    for r in rows:
        print(f"l={r[0]} {r[1]}: {r[2]:.2f} evaluations")
    return EXIT_OK


def cmd_bench_conditioning(args: argparse.Namespace) -> int:
    if args.dps is not None and args.dps < 16:
        raise InvalidInputError("dps must be >= 16")
    res = bench_conditioning(args.l, args.shift, args.k, args.seed, args.dps)
    res["cond_ratio"] = res["cond_absolute"] / res["cond_conditioned"]
    keys = list(res)
    write_csv(_out_path(args.out, "conditioning.csv"), keys, [[res[k] for k in keys]])
    print(f"condition numbers: conditioned {res['cond_conditioned']:.3e}, absolute {res['cond_absolute']:.3e}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are invalid input, not the numerical-failure code argparse would use
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="splinetraj", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fixed", help="solve a fixed-time problem")
    f.add_argument("problem")
    f.add_argument("--out")
    f.add_argument("--oracle", action="store_true")
    f.add_argument("--samples", type=int, default=101)
    f.set_defaults(func=cmd_fixed)

    v = sub.add_parser("variable", help="optimize the knot times")
    v.add_argument("problem")
    v.add_argument("--out")
    v.add_argument("--method", choices=METHODS, default="exact")
    v.add_argument("--trace")
    v.add_argument("--samples", type=int, default=101)
    v.set_defaults(func=cmd_variable)

    r = sub.add_parser("rrt", help="plan in a world file")
    r.add_argument("world")
    r.add_argument("--out-dir")
    r.add_argument("--baseline", action="store_true")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--max-iters", type=int)
    r.add_argument("--samples", type=int, default=201)
    r.set_defaults(func=cmd_rrt)

    s = sub.add_parser("bench-scaling", help="solver time against segment count")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--lmin", type=int, default=64)
    s.add_argument("--lmax", type=int, default=8192)
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench_scaling)

    j = sub.add_parser("bench-jevals", help="J evaluations per optimizer method")
    j.add_argument("--l", type=int, nargs="+", default=[6, 8, 10])
    j.add_argument("--trials", type=int, default=100)
    j.add_argument("--rtol", type=float, default=JevalsConfig.rtol)
    j.add_argument("--budget", type=int, default=JevalsConfig.budget)
    j.add_argument("--out")
    j.set_defaults(func=cmd_bench_jevals)

    c = sub.add_parser("bench-conditioning", help="normalized versus absolute-time KKT conditioning")
    c.add_argument("--l", type=int, default=50)
    c.add_argument("--shift", type=float, default=100.0)
    c.add_argument("--k", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--dps", type=int, help="solve the absolute-time form in mpmath at this many digits")
    c.add_argument("--out")
    c.set_defaults(func=cmd_bench_conditioning)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidInputError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
