"""Tests for the command line interface: plumbing, formats, and exit codes."""

import json

import numpy as np
import pytest

from sspde import BracketFailure, StationaryPolicy, analyze
from sspde import cli, io
from sspde.simulate import MixedPolicy


@pytest.fixture
def two_path_file(two_path, tmp_path):
    path = tmp_path / "two_path.json"
    io.save_model(two_path, path)
    return path


def run_cli(capsys, *args):
    code = cli.main([str(a) for a in args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestAnalyze:
    def test_matches_library_analysis(self, two_path, two_path_file, capsys):
        code, out, _ = run_cli(capsys, "analyze", two_path_file)
        assert code == 0
        data = json.loads(out)
        analysis = analyze(two_path)
        assert data["dead_ends"] == np.flatnonzero(analysis.dead_ends).tolist()
        assert data["attention"] == np.flatnonzero(analysis.attention).tolist()
        assert data["p_max"] == [float(v) for v in analysis.p_max]
        assert data["p_min"] == [float(v) for v in analysis.p_min]

    def test_out_file(self, two_path_file, tmp_path, capsys):
        out_path = tmp_path / "analysis.json"
        code, _, _ = run_cli(capsys, "analyze", two_path_file, "--out", out_path)
        assert code == 0
        assert json.loads(out_path.read_text())["dead_ends"] == [4]

    def test_missing_file_is_input_error(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "analyze", tmp_path / "nope.json")
        assert code == 3
        assert "input error" in err

    def test_malformed_model_is_input_error(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": "1", "n_states": 1}')
        code, _, err = run_cli(capsys, "analyze", path)
        assert code == 3
        assert "missing field" in err


class TestSolve:
    def test_mcmp_matches_closed_form(self, two_path_file, capsys):
        code, out, _ = run_cli(capsys, "solve", two_path_file, "--case", "mcmp",
                               "--epsilon", "0.05", "--gamma", "0.999")
        assert code == 0
        data = json.loads(out)
        assert data["case"] == "mcmp"
        assert data["feasible"] is True
        assert data["objective_value"] == pytest.approx(2.019019019019019, abs=1e-3)
        assert data["mixture_j_cond"] == pytest.approx(0.05, abs=1e-4)
        weights = sorted(c["weight"] for c in data["components"])
        assert weights[0] == pytest.approx(0.4904904904904905, abs=1e-3)

    def test_s3p_with_cap(self, two_path_file, capsys):
        code, out, _ = run_cli(capsys, "solve", two_path_file, "--case", "s3p",
                               "--epsilon", "0.05", "--gamma", "0.999",
                               "--cap", "4.0")
        assert code == 0
        data = json.loads(out)
        assert data["objective_value"] == pytest.approx(2.0736525999683892, abs=1e-3)
        assert data["eps_star"] == 0.05

    def test_s3p_requires_cap(self, two_path_file, capsys):
        code, _, err = run_cli(capsys, "solve", two_path_file, "--case", "s3p")
        assert code == 3
        assert "cap" in err

    def test_baseline_cases(self, two_path_file, capsys):
        code, out, _ = run_cli(capsys, "solve", two_path_file, "--case", "s3p-max")
        assert code == 0
        data = json.loads(out)
        assert data["objective_value"] == 3.0
        assert data["success_probability"] == 1.0

        code, out, _ = run_cli(capsys, "solve", two_path_file, "--case", "mcmp-max",
                               "--gamma", "0.999")
        assert code == 0
        assert json.loads(out)["objective_value"] == pytest.approx(3.0, rel=1e-9)

    def test_infeasible_budget_exit_code(self, two_path_file, capsys):
        code, _, err = run_cli(capsys, "solve", two_path_file, "--case", "mcmp",
                               "--epsilon", "1e-9")
        assert code == 2
        assert "infeasible" in err
        assert "0.001" in err  # reports the best achievable measure

    def test_unknown_case_is_input_error(self, two_path_file, capsys):
        code, _, err = run_cli(capsys, "solve", two_path_file, "--case", "mpmc")
        assert code == 3
        assert "invalid choice" in err

    def test_out_prefix_and_dump_augmented(self, two_path_file, tmp_path, capsys):
        prefix = tmp_path / "run"
        code, out, _ = run_cli(capsys, "solve", two_path_file, "--case", "mcmp",
                               "--out-prefix", prefix, "--dump-augmented")
        assert code == 0
        report = json.loads((tmp_path / "run.report.json").read_text())
        assert report["objective_value"] == pytest.approx(2.019, abs=1e-3)
        policy = io.load_policy(tmp_path / "run.policy.json")
        assert isinstance(policy, MixedPolicy)
        for name in ("run.augmented-objective.json", "run.augmented-constraint.json"):
            aug = io.load_model(tmp_path / name)  # validates the dumped model
            meta = json.loads((tmp_path / name).read_text())["metadata"]
            assert len(meta["augmented_index"]) == aug.n_states
            assert meta["augmented_index"][0] == ["star"]
            labeled = [entry for entry in meta["augmented_index"]
                       if entry[0] == "label"]
            assert len(labeled) == 2 * 5  # (x, s) and (x, f) per base state

    def test_numerical_failure_exit_code(self, two_path_file, capsys, monkeypatch):
        def boom(*args, **kwargs):
            raise BracketFailure("no achievable ceiling")

        monkeypatch.setattr(cli, "solve", boom)
        code, _, err = run_cli(capsys, "solve", two_path_file, "--case", "mcmp")
        assert code == 4
        assert "numerical failure" in err


class TestSimulate:
    @pytest.fixture
    def safe_policy_file(self, tmp_path):
        path = tmp_path / "safe.json"
        io.save_policy(StationaryPolicy.deterministic([0, 1, 0, 0, 0]), path)
        return path

    def test_stats_to_stdout(self, two_path_file, safe_policy_file, capsys):
        code, out, _ = run_cli(capsys, "simulate", two_path_file, safe_policy_file,
                               "--n", "40", "--seed", "1")
        assert code == 0
        data = json.loads(out)
        assert data["kind"] == "episode-stats"
        assert data["label"] == "safe"
        assert data["n_episodes"] == 40
        assert data["n_success"] == 40
        assert data["cond_mean_cost_on_success"] == 3.0

    def test_zero_episodes_rejected(self, two_path_file, safe_policy_file, capsys):
        code, _, err = run_cli(capsys, "simulate", two_path_file, safe_policy_file,
                               "--n", "0")
        assert code == 3
        assert "at least 1" in err

    def test_policy_model_mismatch(self, two_path_file, tmp_path, capsys):
        path = tmp_path / "short.json"
        io.save_policy(StationaryPolicy.deterministic([0, 0]), path)
        code, _, err = run_cli(capsys, "simulate", two_path_file, path, "--n", "5")
        assert code == 3
        assert "states" in err

    def test_traj_count_requires_prefix(self, two_path_file, safe_policy_file, capsys):
        code, _, err = run_cli(capsys, "simulate", two_path_file, safe_policy_file,
                               "--n", "5", "--traj-count", "2")
        assert code == 3
        assert "out-prefix" in err

    def test_trajectory_files_match_episodes(self, two_path_file, safe_policy_file,
                                             tmp_path, capsys):
        prefix = tmp_path / "sim"
        code, _, _ = run_cli(capsys, "simulate", two_path_file, safe_policy_file,
                             "--n", "5", "--seed", "4", "--traj-count", "2",
                             "--out-prefix", prefix)
        assert code == 0
        stats = io.load_stats(tmp_path / "sim.stats.json")
        assert stats["n_episodes"] == 5
        csv0 = (tmp_path / "sim.traj-0.csv").read_text()
        assert csv0.splitlines()[0] == "t,state,action,cost,cumulative"
        assert (tmp_path / "sim.traj-1.csv").exists()
        # abstract models have no workspace geometry, so no sketch is drawn
        assert not (tmp_path / "sim.trajectories.svg").exists()

    def test_mixed_policy_from_solve_runs(self, two_path_file, tmp_path, capsys):
        prefix = tmp_path / "run"
        run_cli(capsys, "solve", two_path_file, "--case", "mcmp",
                "--out-prefix", prefix)
        code, out, _ = run_cli(capsys, "simulate", two_path_file,
                               tmp_path / "run.policy.json", "--n", "400",
                               "--seed", "2")
        assert code == 0
        data = json.loads(out)
        # mixture failure rate concentrates near the 5% budget
        assert data["failure_counts"].get("dead-end", 0) < 40


class TestReport:
    def _write_stats(self, tmp_path, name, label, cond, counts):
        data = {"format_version": "1", "kind": "episode-stats", "label": label,
                "n_episodes": 100, "n_success": 90, "n_truncated": 0,
                "cond_mean_cost_on_success": cond, "failure_counts": counts,
                "mean_steps": 4.2, "seed": 0}
        path = tmp_path / name
        path.write_text(json.dumps(data))
        return path

    def test_table_layout(self, tmp_path, capsys):
        a = self._write_stats(tmp_path, "a.json", "mod-s", 16.1,
                              {"obstacle_a": 5, "obstacle_b": 3, "wall": 2})
        b = self._write_stats(tmp_path, "b.json", "max-s", 19.34, {"wall": 10})
        code, out, _ = run_cli(capsys, "report", a, b)
        assert code == 0
        lines = out.splitlines()
        assert lines[0].split() == ["metric", "mod-s", "max-s"]
        table = {line.rsplit(None, 2)[0]: line.split()[-2:] for line in lines[2:]}
        assert table["conditional cost on success"] == ["16.1000", "19.3400"]
        assert table["obstacle collisions"] == ["8", "0"]
        assert table["wall collisions"] == ["2", "10"]

    def test_single_file_single_column(self, tmp_path, capsys):
        a = self._write_stats(tmp_path, "a.json", "only", None, {})
        code, out, _ = run_cli(capsys, "report", a, "--out", tmp_path / "table.txt")
        assert code == 0
        text = (tmp_path / "table.txt").read_text()
        assert "n/a" in text
        assert text.splitlines()[0].split() == ["metric", "only"]

    def test_schema_mismatch(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format_version": "1", "kind": "episode-stats"}))
        code, _, err = run_cli(capsys, "report", path)
        assert code == 3
        assert "missing" in err


class TestRobotPipeline:
    def test_build_analyze_simulate(self, tmp_path, capsys):
        model = tmp_path / "robot.json"
        code, out, _ = run_cli(capsys, "domain", "build-robot", "--grid", "6,6,4",
                               "--noise-samples", "2", "--g-wall", "1",
                               "--out", model)
        assert code == 0
        assert "states" in out
        sidecar = tmp_path / "robot.meta.json"
        meta = json.loads(sidecar.read_text())
        assert meta["kind"] == "robot-grid"
        assert meta["config"]["wall_cost"] == 1.0

        code, out, _ = run_cli(capsys, "analyze", model)
        assert code == 0
        data = json.loads(out)
        assert set(meta["collision_states"].values()) <= set(data["dead_ends"])

        policy = tmp_path / "straight.json"
        io.save_policy(StationaryPolicy.deterministic([2] * meta["n_states"]), policy)
        prefix = tmp_path / "robot-sim"
        code, _, _ = run_cli(capsys, "simulate", model, policy, "--n", "20",
                             "--seed", "0", "--traj-count", "3",
                             "--out-prefix", prefix)
        assert code == 0
        stats = io.load_stats(tmp_path / "robot-sim.stats.json")
        assert stats["n_episodes"] == 20
        header = (tmp_path / "robot-sim.traj-0.csv").read_text().splitlines()[0]
        assert header == "t,state,action,cost,cumulative,x,y,theta"
        svg = (tmp_path / "robot-sim.trajectories.svg").read_text()
        assert svg.count("<polyline") == 3

    def test_bad_grid_argument(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "domain", "build-robot", "--grid", "6x6x4",
                               "--out", tmp_path / "m.json")
        assert code == 3
        assert "NX,NY,NT" in err

    def test_invalid_grid_size(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "domain", "build-robot", "--grid", "1,6,4",
                               "--out", tmp_path / "m.json")
        assert code == 3
        assert "grid sizes" in err


class TestDeterminism:
    def test_solve_stdout_identical_across_runs(self, two_path_file, capsys):
        _, out1, _ = run_cli(capsys, "solve", two_path_file, "--case", "mcmp")
        _, out2, _ = run_cli(capsys, "solve", two_path_file, "--case", "mcmp")
        assert out1 == out2

    def test_simulate_stats_identical_across_runs(self, two_path_file, tmp_path,
                                                  capsys):
        policy = tmp_path / "p.json"
        io.save_policy(StationaryPolicy.deterministic([0, 1, 0, 0, 0]), policy)
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli(capsys, "simulate", two_path_file, policy, "--n", "50",
                "--seed", "9", "--out-prefix", a)
        run_cli(capsys, "simulate", two_path_file, policy, "--n", "50",
                "--seed", "9", "--out-prefix", b)
        assert (tmp_path / "a.stats.json").read_bytes() == \
            (tmp_path / "b.stats.json").read_bytes()

    def test_help_exits_zero(self, capsys):
        assert cli.main(["--help"]) == 0
        assert cli.main(["solve", "--help"]) == 0
