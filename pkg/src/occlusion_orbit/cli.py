"""
Command-line front end.

    occlusion-orbit validate  SCENARIO
    occlusion-orbit plan      SCENARIO
    occlusion-orbit simulate  SCENARIO [--schedule FILE]
    occlusion-orbit tune-beta SCENARIO [--schedule FILE | --radius R --radius-rate RDOT]
    occlusion-orbit field     SCENARIO --time T
    occlusion-orbit vv build  SCENARIO (--at X Y | --time T)
    occlusion-orbit vv metric GRID_A GRID_B

Any scenario key can be overridden with ``--key value`` (value parsed as JSON).
Exit codes: 0 success, 2 validation or input error, 3 infeasible plan, 4 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .control import BetaGrid, ControllerConfig, tune_beta_grid
from .env import poi_state
from .guidance import field_csv, field_grid
from .orbit import Infeasible, OrbitSchedule, build_orbit_schedule, on_orbit_initial_state, orbit_sample
from .scenario import KEYS, Scenario, ScenarioError, check_parameters, load_scenario
from .sim import Configuration, SimConfig, SimulationAbort, compute_metrics, simulate_closed_loop
from .visibility import adaptive_discretize, build_vv_grid, vv_from_text, vv_to_text, vv_xor_volume

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_ABORT = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _parse_overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            val = extra[i + 1]
            i += 1
        key = key.replace("-", "_")
        if key not in KEYS:
            raise UsageError(f"unknown option --{key}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
        i += 1
    return out


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_json(path: Path, data: dict):
    _write(path, json.dumps(data, indent=2, sort_keys=False) + "\n")


def _load_checked(args, extra) -> Scenario:
    sc = load_scenario(args.scenario, _parse_overrides(extra))
    errs = check_parameters(sc)
    if errs:
        raise ScenarioError("; ".join(errs))
    return sc


def _schedule_for(sc: Scenario, path: Optional[str]) -> OrbitSchedule:
    p = Path(path) if path else sc.output_dir / "schedule.json"
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read schedule {p}: {exc.strerror} (run `plan` first)") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return OrbitSchedule.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{p}: invalid schedule: {exc}") from exc


# -- commands ----------------------------------------------------------------


def cmd_validate(args, extra) -> int:
    sc = load_scenario(args.scenario, _parse_overrides(extra))
    errs = check_parameters(sc)
    for e in errs:
        print(f"error: {e}")
    if errs:
        return EXIT_INVALID
    print(f"ok scenario={sc.hash}")
    return EXIT_OK


def cmd_plan(args, extra) -> int:
    sc = _load_checked(args, extra)
    c = sc.config
    traj = sc.trajectory()
    disc = adaptive_discretize(sc.env, traj, c["d_cutoff"], c["initial_spacing"], c["min_spacing"], c["cell"], c["d_max"])
    out = sc.output_dir
    _write(out / "discretization.csv", disc.to_csv(sc.header("discretization")))
    result = build_orbit_schedule(
        sc.env, traj, disc.points, disc.times, sc.kappa_max, c["v"], c["h_uav"], c["d_max"], c["n_rays"], c["direction"]
    )
    if isinstance(result, Infeasible):
        _write_json(out / "infeasible.json", {**sc.json_meta("infeasible"), **result.to_dict()})
        print(
            f"infeasible: point {result.index} at ({result.point[0]:.3f}, {result.point[1]:.3f}), t={result.t:.3f}: "
            f"{result.reason} (radius {result.radius:.3f} < threshold {result.threshold:.3f})",
            file=sys.stderr,
        )
        return EXIT_INFEASIBLE
    _write_json(out / "schedule.json", {**sc.json_meta("schedule"), **result.to_dict()})
    print(f"planned {len(result.times)} knots, radii {result.radii.min():.3f}..{result.radii.max():.3f} m -> {out / 'schedule.json'}")
    return EXIT_OK


def cmd_simulate(args, extra) -> int:
    sc = _load_checked(args, extra)
    c = sc.config
    sched = _schedule_for(sc, args.schedule)
    traj = sc.trajectory()
    t0 = max(float(c["t0"]), sched.t_start)
    tf = sched.t_end if c["t_final"] is None else float(c["t_final"])
    if c["q0"] is None:
        q0, _ = on_orbit_initial_state(sched, t0, float(c["theta0"]), sched.direction)
    else:
        q0 = c["q0"]
    ctrl = ControllerConfig.for_vehicle(c["v"], c["r_min"], c["beta"], c["k_psi"], c["tau_inner"])
    cfg = SimConfig(c["dt"], (t0, tf), Configuration(*map(float, q0)), c["v"], ctrl, "closed-loop", c["d_max"])
    out = sc.output_dir
    try:
        trace = simulate_closed_loop(sc.env, sched, traj, cfg)
    except SimulationAbort as exc:
        _write(out / "trace.csv", exc.trace.to_csv(sc.header("trace")))
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    _write(out / "trace.csv", trace.to_csv(sc.header("trace")))
    m = compute_metrics(trace)
    _write_json(out / "metrics.json", {**sc.json_meta("metrics"), **m.to_dict()})
    status = f"converged at t={m.convergence_time:.3f}" if m.converged else "never converged"
    print(f"simulated {len(trace)} steps, {status}, visibility {m.visibility_fraction:.4f}")
    return EXIT_OK


def cmd_tune_beta(args, extra) -> int:
    sc = _load_checked(args, extra)
    c = sc.config
    grid = BetaGrid(c["tune_n_r"], c["tune_r_max_factor"], c["tune_n_theta"], c["tune_n_psi"])
    u_max = sc.u_psi_max

    def run(R, R_dot, v_g, direction):
        return tune_beta_grid(c["v"], v_g, R, R_dot, c["beta"], c["tau_inner"], u_max, grid, direction)

    if args.radius is not None:
        rep = run(args.radius, args.radius_rate, c["v_g"], c["direction"])
        intervals = [{"interval": None, "R": args.radius, "R_dot": args.radius_rate, "max_turn_rate": rep.max_turn_rate}]
        worst, worst_k = rep, None
    else:
        sched = _schedule_for(sc, args.schedule)
        intervals, worst, worst_k = [], None, None
        for k in range(len(sched.times) - 1):
            R = float(min(sched.radii[k], sched.radii[k + 1]))
            R_dot = float((sched.radii[k + 1] - sched.radii[k]) / (sched.times[k + 1] - sched.times[k]))
            rep = run(R, R_dot, sched.v_g, sched.direction)
            intervals.append({"interval": k, "R": R, "R_dot": R_dot, "max_turn_rate": rep.max_turn_rate})
            if worst is None or rep.max_turn_rate > worst.max_turn_rate:
                worst, worst_k = rep, k
    report = {
        **sc.json_meta("tune-beta"),
        "beta": c["beta"],
        "max_turn_rate": worst.max_turn_rate,
        "u_psi_max": u_max,
        "pass": worst.passed,
        "argmax": {"interval": worst_k, **worst.to_dict()["argmax"]},
        "intervals": intervals,
        "inputs": worst.inputs,
        "grid": worst.grid,
    }
    _write_json(sc.output_dir / "tune_beta.json", report)
    verdict = "PASS" if worst.passed else "FAIL"
    print(f"max |psi_d_dot + u_lyap| = {worst.max_turn_rate:.4f} rad/s vs limit {u_max:.4f}: {verdict}")
    return EXIT_OK


def cmd_field(args, extra) -> int:
    sc = _load_checked(args, extra)
    c = sc.config
    sched = _schedule_for(sc, args.schedule)
    t = sched.t_start if args.time is None else args.time
    smp = orbit_sample(sched, t)
    half = args.extent if args.extent is not None else 2 * smp.R
    gx, gy = smp.g
    data = field_grid(sched, t, c["v"], c["beta"], (gx - half, gx + half), (gy - half, gy + half), args.nx, args.ny)
    path = sc.output_dir / "field.csv"
    _write(path, field_csv(data, sc.header("field") + f" t={t!r}"))
    print(f"wrote {len(data['x'])} field samples -> {path}")
    return EXIT_OK


def cmd_vv_build(args, extra) -> int:
    sc = _load_checked(args, extra)
    c = sc.config
    if args.at is not None:
        g = np.array(args.at, dtype=float)
        tag = f"x{g[0]:g}_y{g[1]:g}"
    else:
        traj = sc.trajectory()
        t = traj.t0 if args.time is None else args.time
        g = poi_state(traj, t)[0]
        tag = f"t{t:g}"
    grid = build_vv_grid(sc.env, g, c["d_max"], c["cell"])
    path = Path(args.out) if args.out else sc.output_dir / f"vv_{tag}.txt"
    _write(path, vv_to_text(grid, sc.header("vvgrid")))
    print(f"visible volume {grid.volume:.1f} m^3 over {grid.dims} cells -> {path}")
    return EXIT_OK


def cmd_vv_metric(args, extra) -> int:
    if extra:
        raise UsageError(f"unexpected arguments {extra}")
    grids = []
    for p in (args.a, args.b):
        try:
            grids.append(vv_from_text(Path(p).read_text()))
        except OSError as exc:
            raise ScenarioError(f"cannot read {p}: {exc.strerror}") from exc
    print(json.dumps({"xor_volume": vv_xor_volume(*grids)}))
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occlusion-orbit", description="Occlusion-aware orbit planning and guidance.", allow_abbrev=False)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, fn, help):
        sp = sub.add_parser(name, help=help, allow_abbrev=False)
        sp.add_argument("scenario")
        sp.set_defaults(func=fn)
        return sp

    scenario_cmd("validate", cmd_validate, "check environment, graph and parameters")
    scenario_cmd("plan", cmd_plan, "discretize the POI path and build the orbit schedule")
    sp = scenario_cmd("simulate", cmd_simulate, "fly the closed loop and report metrics")
    sp.add_argument("--schedule")
    sp = scenario_cmd("tune-beta", cmd_tune_beta, "grid-search the worst-case commanded turn rate")
    sp.add_argument("--schedule")
    sp.add_argument("--radius", type=float)
    sp.add_argument("--radius-rate", type=float, default=0.0)
    sp = scenario_cmd("field", cmd_field, "sample the guidance field on a grid")
    sp.add_argument("--schedule")
    sp.add_argument("--time", type=float)
    sp.add_argument("--nx", type=int, default=41)
    sp.add_argument("--ny", type=int, default=41)
    sp.add_argument("--extent", type=float, help="half-width of the grid about the POI (default 2R)")

    vv = sub.add_parser("vv", help="visibility volume grids", allow_abbrev=False)
    vsub = vv.add_subparsers(dest="vv_command", required=True)
    b = vsub.add_parser("build", allow_abbrev=False)
    b.add_argument("scenario")
    where = b.add_mutually_exclusive_group()
    where.add_argument("--at", type=float, nargs=2, metavar=("X", "Y"))
    where.add_argument("--time", type=float)
    b.add_argument("--out")
    b.set_defaults(func=cmd_vv_build)
    m = vsub.add_parser("metric", allow_abbrev=False)
    m.add_argument("a")
    m.add_argument("b")
    m.set_defaults(func=cmd_vv_metric)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args, extra)
    except (ScenarioError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
