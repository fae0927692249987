import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from occlusion_orbit.cli import main
from occlusion_orbit.env import PoiTrajectory
from occlusion_orbit.sim import SimTrace, verify_visibility
from occlusion_orbit.env import environment_from_dict

REPO = Path(__file__).resolve().parents[1]


def make_scenario(tmp_path, obstacles=(), **overrides):
    (tmp_path / "env.json").write_text(json.dumps({"h_feasible": 200.0, "obstacles": list(obstacles)}))
    (tmp_path / "graph.json").write_text(json.dumps({"nodes": [[0, 0], [100, 0]], "edges": [[0, 1]]}))
    cfg = {
        "environment": "env.json",
        "road_graph": "graph.json",
        "node_sequence": [0, 1],
        "v_g": 5.0,
        "h_uav": 60.0,
        "d_max": 100.0,
        "v": 20.0,
        "r_min": 15.0,
        "initial_spacing": 25.0,
        "min_spacing": 5.0,
        "d_cutoff": 1e9,
        "cell": 4.0,
        "n_rays": 72,
        "beta": 0.05,
        "k_psi": 2.0,
        "dt": 0.01,
        "t_final": 4.0,
        "tune_n_r": 60,
        "tune_n_theta": 72,
        "tune_n_psi": 144,
    }
    cfg.update(overrides)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path


def header_hash(line):
    return line.split("scenario=")[1].split()[0]


class TestValidate:
    def test_valid(self, tmp_path, capsys):
        assert main(["validate", str(make_scenario(tmp_path))]) == 0
        assert capsys.readouterr().out.startswith("ok scenario=")

    def test_slow_vehicle(self, tmp_path, capsys):
        assert main(["validate", str(make_scenario(tmp_path, v_g=25.0))]) == 2
        assert "v > v_g" in capsys.readouterr().out

    def test_override_flag(self, tmp_path, capsys):
        assert main(["validate", str(make_scenario(tmp_path)), "--v-g", "25"]) == 2
        assert "v > v_g" in capsys.readouterr().out

    def test_malformed_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "v": 20,\n  "v_g": ,\n}')
        assert main(["validate", str(p)]) == 2
        assert "line 3" in capsys.readouterr().err

    def test_unknown_option(self, tmp_path):
        assert main(["validate", str(make_scenario(tmp_path)), "--nope", "1"]) == 2

    def test_bad_environment(self, tmp_path, capsys):
        wall = {"base": [[40, -5], [60, -5], [60, 5], [40, 5]], "height": 30}
        assert main(["validate", str(make_scenario(tmp_path, [wall]))]) == 2
        assert "intersects obstacle 0" in capsys.readouterr().out


class TestPlanSimulate:
    def test_open_field(self, tmp_path):
        sc = make_scenario(tmp_path)
        assert main(["plan", str(sc)]) == 0
        sched = json.loads((tmp_path / "out" / "schedule.json").read_text())
        assert sched["format_version"] == 1 and len(sched["scenario_hash"]) == 64
        assert [k["R"] for k in sched["knots"]] == pytest.approx([math.sqrt(100**2 - 60**2)] * 5)
        lines = (tmp_path / "out" / "discretization.csv").read_text().splitlines()
        assert header_hash(lines[0]) == sched["scenario_hash"]

    def test_canyon_infeasible(self, tmp_path, capsys):
        walls = [
            {"base": [[50, 4], [150, 4], [150, 30], [50, 30]], "height": 50},
            {"base": [[50, -30], [150, -30], [150, -4], [50, -4]], "height": 50},
        ]
        sc = make_scenario(tmp_path, walls)
        assert main(["plan", str(sc)]) == 3
        info = json.loads((tmp_path / "out" / "infeasible.json").read_text())
        assert info["index"] == 2 and info["point"] == [50.0, 0.0]
        assert info["radius"] < info["threshold"]
        assert "point 2" in capsys.readouterr().err

    def test_simulate_roundtrip_and_determinism(self, tmp_path):
        sc = make_scenario(tmp_path)
        assert main(["plan", str(sc)]) == 0
        assert main(["simulate", str(sc)]) == 0
        out = tmp_path / "out"
        first = (out / "trace.csv").read_text(), (out / "metrics.json").read_text()
        assert main(["simulate", str(sc)]) == 0
        assert ((out / "trace.csv").read_text(), (out / "metrics.json").read_text()) == first

        metrics = json.loads(first[1])
        assert metrics["convergence_time"] == 0.0  # default start is on the orbit
        trace = SimTrace.from_csv(first[0])
        env = environment_from_dict(json.loads((tmp_path / "env.json").read_text()))
        traj = PoiTrajectory(np.array([[0.0, 0.0], [100.0, 0.0]]), 5.0)
        _, frac = verify_visibility(env, trace, traj, 100.0, 60.0)
        assert metrics["visibility_fraction"] == pytest.approx(frac)
        assert header_hash(first[0].splitlines()[0]) == metrics["scenario_hash"]

    def test_override_changes_hash(self, tmp_path):
        sc = make_scenario(tmp_path)
        main(["plan", str(sc)])
        a = json.loads((tmp_path / "out" / "schedule.json").read_text())["scenario_hash"]
        main(["plan", str(sc), "--n_rays", "80"])
        b = json.loads((tmp_path / "out" / "schedule.json").read_text())["scenario_hash"]
        assert a != b

    def test_runtime_abort(self, tmp_path):
        sc = make_scenario(tmp_path, q0=[0.0, 0.0, 0.0])
        assert main(["plan", str(sc)]) == 0
        assert main(["simulate", str(sc)]) == 4
        assert (tmp_path / "out" / "trace.csv").read_text().startswith("# occlusion-orbit trace v1")

    def test_simulate_without_plan(self, tmp_path, capsys):
        assert main(["simulate", str(make_scenario(tmp_path))]) == 2
        assert "plan" in capsys.readouterr().err


class TestTuneBeta:
    def test_paper_parameters(self, tmp_path):
        sc = make_scenario(tmp_path, r_min=50.0, beta=0.025, tune_n_r=400, tune_n_theta=360, tune_n_psi=720)
        assert main(["tune-beta", str(sc), "--radius", "85.9", "--radius-rate", "1.3"]) == 0
        rep = json.loads((tmp_path / "out" / "tune_beta.json").read_text())
        assert rep["max_turn_rate"] == pytest.approx(0.378, abs=0.01)
        assert rep["pass"] is True and rep["u_psi_max"] == pytest.approx(0.4)

    def test_large_beta_fails(self, tmp_path, capsys):
        sc = make_scenario(tmp_path)
        assert main(["plan", str(sc)]) == 0
        assert main(["tune-beta", str(sc), "--beta", "1.0", "--r_min", "50"]) == 0
        rep = json.loads((tmp_path / "out" / "tune_beta.json").read_text())
        assert rep["pass"] is False and "FAIL" in capsys.readouterr().out
        assert set(rep) >= {"format_version", "scenario_hash", "beta", "max_turn_rate", "u_psi_max", "pass", "argmax", "intervals", "inputs", "grid"}
        assert set(rep["argmax"]) == {"interval", "r", "theta_minus_gamma", "psi_err"}
        assert len(rep["intervals"]) == 4


class TestField:
    def test_field_csv(self, tmp_path):
        sc = make_scenario(tmp_path)
        static = {"direction": "CCW", "v": 20.0, "v_g": 0.0, "h_UAV": 60.0, "knots": [{"t": 0, "g": [0, 0], "R": 40}, {"t": 10, "g": [0, 0], "R": 40}]}
        (tmp_path / "static.json").write_text(json.dumps(static))
        assert main(["field", str(sc), "--schedule", str(tmp_path / "static.json"), "--time", "1", "--nx", "21", "--ny", "21", "--extent", "40"]) == 0
        lines = (tmp_path / "out" / "field.csv").read_text().splitlines()
        assert lines[0].startswith("# occlusion-orbit field v1 scenario=")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
        assert len(rows) == 21 * 21 - 1
        assert np.all(np.abs(np.hypot(rows[:, 2], rows[:, 3]) - 20) < 1e-9)
        on = np.abs(np.hypot(rows[:, 0], rows[:, 1]) - 40) < 1e-9
        assert on.sum() >= 4
        radial = (rows[on, 0] * rows[on, 2] + rows[on, 1] * rows[on, 3]) / 40
        assert np.all(np.abs(radial) < 1e-9)


class TestVV:
    def test_build_and_metric(self, tmp_path, capsys):
        sc = make_scenario(tmp_path)
        assert main(["vv", "build", str(sc), "--time", "0", "--out", str(tmp_path / "a.txt")]) == 0
        assert main(["vv", "build", str(sc), "--at", "4", "0", "--out", str(tmp_path / "b.txt")]) == 0
        capsys.readouterr()
        assert main(["vv", "metric", str(tmp_path / "a.txt"), str(tmp_path / "a.txt")]) == 0
        assert json.loads(capsys.readouterr().out)["xor_volume"] == 0
        assert main(["vv", "metric", str(tmp_path / "a.txt"), str(tmp_path / "b.txt")]) == 0
        assert json.loads(capsys.readouterr().out)["xor_volume"] > 0


def test_bundled_scenario_validates(tmp_path):
    src = REPO / "scenarios" / "two_corridor"
    dst = tmp_path / "two_corridor"
    shutil.copytree(src, dst, ignore=shutil.ignore_patterns("out"))
    assert main(["validate", str(dst / "scenario.json")]) == 0


def test_missing_subcommand():
    assert main([]) == 2
