"""
Scenario files: one JSON object of flat keys describing a full mission.

File paths inside a scenario are resolved against the scenario's directory.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .env import (
    Environment,
    PoiTrajectory,
    RoadGraph,
    environment_from_dict,
    graph_from_dict,
    trajectory_from_graph,
    validate_environment,
)

FORMAT_VERSION = 1

REQUIRED = ("environment", "road_graph", "node_sequence", "v_g", "h_uav", "d_max", "v", "r_min")

DEFAULTS: dict[str, Any] = {
    "t0": 0.0,
    "initial_spacing": 20.0,
    "min_spacing": 2.0,
    "d_cutoff": 2.0e5,
    "cell": 2.0,
    "n_rays": 720,
    "beta": 0.025,
    "k_psi": 1.0,
    "tau_inner": 1.0,
    "dt": 1e-3,
    "q0": None,
    "theta0": 0.0,
    "direction": "CCW",
    "output_dir": "out",
    "t_final": None,
    "tune_n_r": 400,
    "tune_n_theta": 360,
    "tune_n_psi": 720,
    "tune_r_max_factor": 5.0,
}

KEYS = REQUIRED + tuple(DEFAULTS)


class ScenarioError(ValueError):
    """Unreadable or inconsistent scenario."""


@dataclass
class Scenario:
    config: dict
    base_dir: Path
    env: Environment
    graph: RoadGraph
    env_bytes: bytes = field(repr=False, default=b"")
    graph_bytes: bytes = field(repr=False, default=b"")

    def __getitem__(self, key: str):
        return self.config[key]

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.config["output_dir"])

    @property
    def kappa_max(self) -> float:
        return 1.0 / self.config["r_min"]

    @property
    def u_psi_max(self) -> float:
        return self.config["v"] / self.config["r_min"]

    def trajectory(self) -> PoiTrajectory:
        return trajectory_from_graph(self.graph, self.config["node_sequence"], self.config["v_g"], self.config["t0"])

    @property
    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.config, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\0")
        h.update(self.env_bytes)
        h.update(b"\0")
        h.update(self.graph_bytes)
        return h.hexdigest()

    def header(self, kind: str) -> str:
        return f"# occlusion-orbit {kind} v{FORMAT_VERSION} scenario={self.hash}"

    def json_meta(self, kind: str) -> dict:
        return {"format": f"occlusion-orbit {kind}", "format_version": FORMAT_VERSION, "scenario_hash": self.hash}


def _json_error(path, exc: json.JSONDecodeError) -> ScenarioError:
    return ScenarioError(f"{path}: JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}")


def _read_json(path: Path) -> tuple[Any, bytes]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(raw), raw
    except json.JSONDecodeError as exc:
        raise _json_error(path, exc) from exc


def load_scenario(path, overrides: Optional[dict] = None) -> Scenario:
    path = Path(path)
    data, _ = _read_json(path)
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: scenario must be a JSON object")
    cfg = dict(DEFAULTS)
    cfg.update(data)
    cfg.update(overrides or {})
    unknown = sorted(set(cfg) - set(KEYS))
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED if cfg.get(k) is None]
    if missing:
        raise ScenarioError(f"missing scenario keys: {', '.join(missing)}")
    base = path.resolve().parent
    env_data, env_bytes = _read_json(_resolve(base, cfg["environment"]))
    graph_data, graph_bytes = _read_json(_resolve(base, cfg["road_graph"]))
    try:
        env = environment_from_dict(env_data)
        graph = graph_from_dict(graph_data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed environment or road graph: {exc}") from exc
    return Scenario(cfg, base, env, graph, env_bytes, graph_bytes)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def check_parameters(sc: Scenario) -> list[str]:
    """Parameter sanity problems, empty when the scenario is usable."""
    c = sc.config
    errs = []

    def num(key, positive=True):
        val = c.get(key)
        if not isinstance(val, (int, float)) or isinstance(val, bool) or not math.isfinite(val):
            errs.append(f"{key} must be a finite number")
            return None
        if positive and not val > 0:
            errs.append(f"{key} must be positive")
            return None
        return float(val)

    v, v_g, h, d_max = num("v"), num("v_g"), num("h_uav"), num("d_max")
    for key in ("r_min", "initial_spacing", "min_spacing", "d_cutoff", "cell", "beta", "k_psi", "dt"):
        num(key)
    num("t0", positive=False)
    if v is not None and v_g is not None and not v > v_g:
        errs.append(f"constraint v > v_g violated (v={v}, v_g={v_g})")
    if h is not None:
        if not sc.env.h_building < h < sc.env.h_feasible:
            errs.append(f"h_uav={h} outside feasible band ({sc.env.h_building}, {sc.env.h_feasible})")
        if d_max is not None and not d_max > h:
            errs.append(f"constraint d_max > h_uav violated (d_max={d_max}, h_uav={h})")
    if isinstance(c.get("min_spacing"), (int, float)) and isinstance(c.get("initial_spacing"), (int, float)):
        if not c["min_spacing"] < c["initial_spacing"]:
            errs.append("min_spacing must be smaller than initial_spacing")
    if isinstance(c.get("cell"), (int, float)) and d_max is not None and c["cell"] > d_max:
        errs.append("cell must not exceed d_max")
    if not isinstance(c.get("n_rays"), int) or c["n_rays"] < 8:
        errs.append("n_rays must be an integer >= 8")
    tau = c.get("tau_inner")
    if not isinstance(tau, (int, float)) or not 0 < tau <= 1:
        errs.append("tau_inner must lie in (0, 1]")
    if str(c.get("direction")).upper() not in ("CW", "CCW"):
        errs.append("direction must be CW or CCW")
    q0 = c.get("q0")
    if q0 is not None and (not isinstance(q0, list) or len(q0) != 3):
        errs.append("q0 must be null or [x, y, psi]")
    seq = c.get("node_sequence")
    if not isinstance(seq, list) or not all(isinstance(k, int) for k in seq):
        errs.append("node_sequence must be a list of node indices")
    elif v_g is not None:
        try:
            sc.trajectory()
        except ValueError as exc:
            errs.append(f"node_sequence: {exc}")
    errs.extend(validate_environment(sc.env, sc.graph))
    return errs
