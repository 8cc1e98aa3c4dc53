from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from splinetraj.bench import random_instance
from splinetraj.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, OUT_ENV, load_json, main

HERMITE = {
    "k": 2,
    "times": [-1.0, 1.0],
    "pins": [
        {"knot": 0, "deriv": 0, "value": 0.0},
        {"knot": 0, "deriv": 1, "value": 0.0},
        {"knot": 1, "deriv": 0, "value": 1.0},
        {"knot": 1, "deriv": 1, "value": 0.0},
    ],
}


def write(path: Path, doc) -> Path:
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc), encoding="utf-8")
    return path


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float) if len(rows) > 1 else np.zeros((0, len(rows[0])))


def rest_doc(waypoints, deltas, k=5, **extra):
    l = len(waypoints) - 1
    pins = [{"knot": j, "deriv": 0, "value": v} for j, v in enumerate(waypoints)]
    pins += [{"knot": j, "deriv": q, "value": 0.0} for j in (0, l) for q in range(1, k)]
    return {"k": k, "initial_deltas": deltas, "pins": pins, **extra}


def summary_J(out: str) -> float:
    return float(re.search(r"J = (\S+)", out).group(1))


class TestFixed:
    def test_hermite(self, tmp_path, capsys):
        prob = write(tmp_path / "h.json", HERMITE)
        out = tmp_path / "traj.csv"
        assert main(["fixed", str(prob), "--out", str(out), "--samples", "11"]) == EXIT_OK
        assert summary_J(capsys.readouterr().out) == pytest.approx(0.6, abs=1e-12)
        header, rows = read_csv(out)
        assert header == ["t", "x_d0", "x_d1"]
        assert len(rows) == 11
        first, last = rows[rows[:, 0] == -1.0], rows[rows[:, 0] == 1.0]
        np.testing.assert_allclose(first[0, 1:], [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(last[0, 1:], [1.0, 0.0], atol=1e-12)

    def test_knot_rows_always_present(self, tmp_path):
        pins = [{"knot": 0, "deriv": 0, "value": 0.0}, {"knot": 2, "deriv": 0, "value": 1.0}]
        doc = {"k": 2, "times": [0.0, 0.3, 1.0], "pins": pins}
        prob = write(tmp_path / "p.json", doc)
        out = tmp_path / "t.csv"
        assert main(["fixed", str(prob), "--out", str(out), "--samples", "3"]) == EXIT_OK
        _, rows = read_csv(out)
        assert 0.3 in rows[:, 0]

    def test_oracle_deviation(self, tmp_path, capsys):
        p = random_instance(np.random.default_rng(1), 4, 12)
        doc = {
            "k": 4,
            "times": p.times.t.tolist(),
            "pins": [{"knot": q.knot, "deriv": q.deriv, "value": q.value} for q in p.pins],
        }
        prob = write(tmp_path / "r.json", doc)
        assert main(["fixed", str(prob), "--out", str(tmp_path / "o.csv"), "--oracle"]) == EXIT_OK
        dev = float(re.search(r"oracle max deviation = (\S+)", capsys.readouterr().out).group(1))
        assert dev <= 1e-7

    def test_malformed_json_offset(self, tmp_path, capsys):
        text = '{"k": 2, "times": [0, 1],, "pins": []}'
        prob = write(tmp_path / "bad.json", text)
        assert main(["fixed", str(prob)]) == EXIT_INVALID
        err = capsys.readouterr().err
        assert f"byte offset {text.index(',,') + 1}" in err

    def test_offset_counts_bytes(self, tmp_path, capsys):
        text = '{"name": "éé", }'
        prob = write(tmp_path / "bad.json", text)
        assert main(["fixed", str(prob)]) == EXIT_INVALID
        assert f"byte offset {len(text.encode()) - 1}" in capsys.readouterr().err

    def test_unknown_field(self, tmp_path, capsys):
        prob = write(tmp_path / "u.json", dict(HERMITE, colour="red"))
        assert main(["fixed", str(prob)]) == EXIT_INVALID
        assert "colour" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["fixed", str(tmp_path / "nope.json")]) == EXIT_INVALID

    def test_bad_pin_index(self, tmp_path):
        doc = dict(HERMITE, pins=[{"knot": 5, "deriv": 0, "value": 0.0}])
        assert main(["fixed", str(write(tmp_path / "p.json", doc))]) == EXIT_INVALID

    def test_numerical_failure(self, tmp_path, capsys):
        doc = {"k": 3, "times": [0.0, 1.0], "pins": [{"knot": 0, "deriv": 0, "value": 1.0}]}
        assert main(["fixed", str(write(tmp_path / "s.json", doc))]) == EXIT_NUMERICAL
        assert "numerical failure" in capsys.readouterr().err

    def test_usage_error_is_invalid(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fixed"])
        assert exc.value.code == EXIT_INVALID

    def test_default_out_dir_from_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_ENV, str(tmp_path / "outdir"))
        prob = write(tmp_path / "h.json", HERMITE)
        assert main(["fixed", str(prob)]) == EXIT_OK
        assert (tmp_path / "outdir" / "trajectory.csv").exists()

    def test_dimensions_form(self, tmp_path):
        doc = {
            "times": [0.0, 1.0, 2.5],
            "dimensions": [
                {"name": "x", "k": 3, "pins": [{"knot": j, "deriv": 0, "value": float(j)} for j in range(3)]},
                {"name": "yaw", "k": 2, "pins": [{"knot": j, "deriv": 0, "value": 0.5} for j in range(3)]},
            ],
        }
        out = tmp_path / "t.csv"
        assert main(["fixed", str(write(tmp_path / "d.json", doc)), "--out", str(out)]) == EXIT_OK
        header, _ = read_csv(out)
        assert header == ["t", "x_d0", "x_d1", "x_d2", "yaw_d0", "yaw_d1"]


class TestVariable:
    def test_single_segment_one_entry(self, tmp_path):
        prob = write(tmp_path / "v.json", rest_doc([0.0, 2.0], [1.0]))
        trace = tmp_path / "trace.csv"
        assert main(["variable", str(prob), "--out", str(tmp_path / "t.csv"), "--trace", str(trace)]) == EXIT_OK
        header, rows = read_csv(trace)
        assert header == ["iter", "J", "step", "evals"]
        assert len(rows) == 1

    def test_trace_non_increasing(self, tmp_path):
        prob = write(tmp_path / "v.json", rest_doc([0.0, 3.0, -1.0, 2.0, 2.5], [0.3, 1.2, 0.8, 0.5], max_iters=60))
        trace = tmp_path / "trace.csv"
        assert main(["variable", str(prob), "--out", str(tmp_path / "t.csv"), "--trace", str(trace)]) == EXIT_OK
        _, rows = read_csv(trace)
        assert len(rows) > 1
        assert np.all(np.diff(rows[:, 1]) <= 1e-12 * rows[0, 1])
        assert np.all(np.diff(rows[:, 3]) >= 0)

    def test_exact_vs_findiff(self, tmp_path, capsys):
        prob = write(tmp_path / "v.json", rest_doc([0.0, 1.0, -1.0, 0.5], [0.5, 1.5, 1.0], max_iters=2000, seed=3))
        results = {}
        for method in ("exact", "findiff"):
            assert main(["variable", str(prob), "--method", method, "--out", str(tmp_path / f"{method}.csv")]) == EXIT_OK
            results[method] = summary_J(capsys.readouterr().out)
        assert results["findiff"] == pytest.approx(results["exact"], rel=1e-4)

    def test_byte_identical(self, tmp_path):
        prob = write(tmp_path / "v.json", rest_doc([0.0, 1.0, -2.0], [0.5, 1.0], max_iters=20))
        blobs = []
        for run in range(2):
            out, trace = tmp_path / f"t{run}.csv", tmp_path / f"tr{run}.csv"
            assert main(["variable", str(prob), "--method", "random", "--out", str(out), "--trace", str(trace)]) == 0
            blobs.append((out.read_bytes(), trace.read_bytes()))
        assert blobs[0] == blobs[1]

    def test_shifted_start(self, tmp_path, capsys):
        times = []
        for tau0 in (0.0, 7.0):
            prob = write(tmp_path / "v.json", rest_doc([0.0, 1.0, 3.0], [0.4, 1.1], tau0=tau0, max_iters=50))
            assert main(["variable", str(prob), "--out", str(tmp_path / "t.csv")]) == EXIT_OK
            line = re.search(r"times = (\S+)", capsys.readouterr().out).group(1)
            times.append(np.array(line.split(","), dtype=float))
        # knots are rebuilt from tau0, so their differences carry an ulp of the offset
        np.testing.assert_allclose(np.diff(times[0]), np.diff(times[1]), rtol=0, atol=1e-13)

    def test_needs_times(self, tmp_path):
        doc = rest_doc([0.0, 1.0], [1.0])
        del doc["initial_deltas"]
        assert main(["variable", str(write(tmp_path / "v.json", doc))]) == EXIT_INVALID


WORLD = {
    "bounds": [[0.0, 10.0], [0.0, 10.0]],
    "obstacles": [{"min": [4.0, 0.0], "max": [5.0, 6.0]}],
    "start": [1.0, 1.0],
    "goal": {"min": [7.0, 1.0], "max": [9.5, 3.0]},
    "config": {"max_iters": 25, "seed": 2},
}


def metrics_without_time(path: Path) -> list[list[str]]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("wall_ms")
    return [r[:col] + r[col + 1 :] for r in rows]


class TestRrt:
    def test_single_trial_reproducible(self, tmp_path):
        world = write(tmp_path / "w.json", WORLD)
        runs = []
        for run in range(2):
            out = tmp_path / f"run{run}"
            assert main(["rrt", str(world), "--out-dir", str(out), "--trials", "1"]) == EXIT_OK
            runs.append((metrics_without_time(out / "metrics.csv"), (out / "minsnap_edges.csv").read_bytes()))
        assert runs[0] == runs[1]
        header = runs[0][0][0]
        assert header == ["trial", "method", "total_snap"]

    def test_empty_world_both_succeed(self, tmp_path):
        doc = dict(WORLD, obstacles=[], config={"max_iters": 20, "seed": 0})
        out = tmp_path / "o"
        assert main(["rrt", str(write(tmp_path / "w.json", doc)), "--out-dir", str(out), "--baseline"]) == EXIT_OK
        rows = metrics_without_time(out / "metrics.csv")[1:]
        assert {r[1] for r in rows} == {"minsnap", "euclidean"}
        assert all(np.isfinite(float(r[2])) for r in rows)
        assert (out / "minsnap_trajectory.csv").exists() and (out / "euclidean_trajectory.csv").exists()

    def test_max_iters_flag(self, tmp_path):
        out = tmp_path / "o"
        assert main(["rrt", str(write(tmp_path / "w.json", WORLD)), "--out-dir", str(out), "--max-iters", "0"]) == 0
        assert read_csv(out / "minsnap_edges.csv")[1].shape[0] == 0

    def test_bad_world(self, tmp_path):
        doc = dict(WORLD, start=[4.5, 3.0])
        assert main(["rrt", str(write(tmp_path / "w.json", doc))]) == EXIT_INVALID
        doc = dict(WORLD, obstacles=[{"min": [4.0, 0.0], "max": [11.0, 6.0]}])
        assert main(["rrt", str(write(tmp_path / "w.json", doc))]) == EXIT_INVALID


class TestBench:
    def test_scaling_small(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        assert main(["bench-scaling", "--lmin", "4", "--lmax", "16", "--reps", "3", "--out", str(out)]) == 0
        header, rows = read_csv(out)
        assert header == ["l", "median_ms", "reps"]
        assert rows[:, 0].tolist() == [4, 8, 16]
        assert "slope" in capsys.readouterr().out

    def test_scaling_reps_enforced(self, tmp_path):
        assert main(["bench-scaling", "--reps", "2", "--out", str(tmp_path / "s.csv")]) == EXIT_INVALID

    def test_scaling_bad_grid(self, tmp_path):
        assert main(["bench-scaling", "--lmin", "8", "--lmax", "4", "--out", str(tmp_path / "s.csv")]) == EXIT_INVALID

    def test_jevals_single_trial(self, tmp_path):
        out = tmp_path / "j.csv"
        assert main(["bench-jevals", "--l", "3", "--trials", "1", "--out", str(out)]) == EXIT_OK
        with out.open(newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["l", "method", "mean_J_evals", "reached_fraction"]
        assert [r[1] for r in rows[1:]] == ["exact", "findiff", "random"]

    def test_jevals_zero_trials(self, tmp_path):
        assert main(["bench-jevals", "--trials", "0", "--out", str(tmp_path / "j.csv")]) == EXIT_INVALID

    def test_conditioning(self, tmp_path):
        out = tmp_path / "c.csv"
        argv = ["bench-conditioning", "--l", "5", "--shift", "0", "--dps", "40", "--out", str(out)]
        assert main(argv) == EXIT_OK
        header, rows = read_csv(out)
        J = rows[0, header.index("cost_conditioned")]
        assert rows[0, header.index("cost_gap")] <= 1e-9 * max(1.0, J)
        assert rows[0, header.index("cond_ratio")] > 1

    def test_conditioning_shifted_ratio(self, tmp_path):
        out = tmp_path / "c.csv"
        assert main(["bench-conditioning", "--l", "50", "--shift", "100", "--out", str(out)]) == EXIT_OK
        header, rows = read_csv(out)
        assert rows[0, header.index("cond_ratio")] >= 1e6
        assert rows[0, header.index("continuity_residual")] < 1e-6


class TestShippedData:
    DATA = Path(__file__).resolve().parents[1] / "data"

    def test_arena_matches_builtin(self):
        from splinetraj.cli import WORLD_SCHEMA, world_from_doc
        from splinetraj.rrt_star import arena

        ws, start, cfg = world_from_doc(load_json(self.DATA / "arena.json", WORLD_SCHEMA))
        ref_ws, ref_start, ref_goal = arena()
        assert ws == ref_ws and np.array_equal(start, ref_start) and cfg.goal == ref_goal

    def test_hermite_file(self, tmp_path, capsys):
        assert main(["fixed", str(self.DATA / "hermite.json"), "--out", str(tmp_path / "h.csv")]) == EXIT_OK
        assert summary_J(capsys.readouterr().out) == pytest.approx(0.6, abs=1e-12)

    def test_figure_eight_loads(self):
        from splinetraj.cli import PROBLEM_SCHEMA, variable_problem

        problem = variable_problem(load_json(self.DATA / "quadrotor_figure_eight.json", PROBLEM_SCHEMA))
        assert [d.name for d in problem.dims] == ["x", "y", "z", "yaw"]
        assert [d.k for d in problem.dims] == [5, 5, 5, 3]
