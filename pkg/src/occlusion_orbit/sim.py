"""
Fixed-step simulation of the Dubins vehicle, post-flight visibility checks and mission metrics.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .control import ControllerConfig, steering_control
from .env import Environment, PoiTrajectory
from .guidance import wrap_angle
from .orbit import (
    Direction,
    OrbitSchedule,
    dir_name,
    on_orbit_initial_state,
    on_orbit_rates,
    orbit_sample,
)
from .visibility import los_visible_many

TRACE_COLUMNS = ["t", "x", "y", "psi", "u_psi_raw", "u_psi", "r_err", "psi_err", "visible"]


@dataclass(frozen=True)
class Configuration:
    x: float
    y: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi])


@dataclass(frozen=True)
class SimConfig:
    dt: float
    t_span: tuple[float, float]
    q0: Configuration
    v: float
    controller: ControllerConfig
    mode: str = "closed-loop"
    d_max: float = math.inf

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_span[1] > self.t_span[0]:
            raise ValueError("t_span must be increasing")
        if self.mode not in ("closed-loop", "open-loop"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class SimTrace:
    t: np.ndarray
    q: np.ndarray
    u_raw: np.ndarray
    u: np.ndarray
    r_err: np.ndarray
    psi_err: np.ndarray
    visible: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.t)

    @property
    def max_abs_r_err(self) -> float:
        return float(np.max(np.abs(self.r_err)))

    def to_csv(self, header: Optional[str] = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(header.rstrip("\n") + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        vis = self.visible if self.visible is not None else [None] * len(self.t)
        for k in range(len(self.t)):
            flag = "" if vis[k] is None else str(int(bool(vis[k])))
            nums = (self.t[k], *self.q[k], self.u_raw[k], self.u[k], self.r_err[k], self.psi_err[k])
            w.writerow([repr(float(x)) for x in nums] + [flag])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SimTrace":
        rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        vis = None
        if rows and rows[0]["visible"] != "":
            vis = np.array([r["visible"] == "1" for r in rows])
        q = np.column_stack([col("x"), col("y"), col("psi")])
        return cls(col("t"), q, col("u_psi_raw"), col("u_psi"), col("r_err"), col("psi_err"), vis)


class SimulationAbort(RuntimeError):
    """Raised when the vehicle enters the singular region; carries the trace so far."""

    def __init__(self, message: str, trace: SimTrace):
        super().__init__(message)
        self.trace = trace


def dubins_derivative(q, u_psi: float, v: float) -> np.ndarray:
    return np.array([v * math.cos(q[2]), v * math.sin(q[2]), u_psi])


def integrate_rk4(state, deriv: Callable, dt: float, t: float = 0.0, wrap_index: Optional[int] = 2) -> np.ndarray:
    """One classical RK4 step of ``ds/dt = deriv(t, s)``; the angle at ``wrap_index`` is wrapped to (−π, π]."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = np.asarray(state, dtype=float)
    k1 = deriv(t, s)
    k2 = deriv(t + dt / 2, s + dt / 2 * k1)
    k3 = deriv(t + dt / 2, s + dt / 2 * k2)
    k4 = deriv(t + dt, s + dt * k3)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise FloatingPointError("non-finite derivative")
    out = s + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if wrap_index is not None:
        out[wrap_index] = wrap_angle(out[wrap_index])
    return out


def _n_steps(t_span, dt) -> int:
    return max(1, int(round((t_span[1] - t_span[0]) / dt)))


def _clip_span(schedule: OrbitSchedule, t_span) -> tuple[float, float]:
    t0, tf = t_span
    if t0 < schedule.t_start - 1e-9 or tf > schedule.t_end + 1e-9:
        raise ValueError(f"t_span {t_span} outside schedule span [{schedule.t_start}, {schedule.t_end}]")
    return float(t0), float(tf)


def simulate_closed_loop(env: Environment, schedule: OrbitSchedule, traj: Optional[PoiTrajectory], cfg: SimConfig) -> SimTrace:
    """Closed-loop flight under the steering controller; visibility is checked along the way when ``traj`` is given.

    Within each step the control is re-evaluated at every RK4 stage using the
    orbit interval containing the step midpoint.
    """
    t0, tf = _clip_span(schedule, cfg.t_span)
    n = _n_steps((t0, tf), cfg.dt)
    dt = (tf - t0) / n
    ctrl = cfg.controller
    ts = t0 + dt * np.arange(n + 1)
    q = np.zeros((n + 1, 3))
    u_raw = np.full(n + 1, np.nan)
    u = np.full(n + 1, np.nan)
    r_err = np.full(n + 1, np.nan)
    psi_err = np.full(n + 1, np.nan)
    R = np.full(n + 1, np.nan)
    q[0] = cfg.q0.as_array()

    def record(k: int, interval: Optional[int]):
        out = steering_control(q[k], ts[k], schedule, ctrl, cfg.v, interval)
        u_raw[k], u[k], r_err[k], psi_err[k] = out.u_raw, out.u, out.r_err, out.psi_err
        R[k] = orbit_sample(schedule, ts[k], interval).R

    def partial(k: int) -> SimTrace:
        tr = SimTrace(ts[:k], q[:k], u_raw[:k], u[:k], r_err[:k], psi_err[:k], None, R[:k])
        if traj is not None and k:
            tr.visible = verify_visibility(env, tr, traj, cfg.d_max, schedule.h_uav)[0]
        return tr

    for k in range(n):
        interval = schedule.interval(ts[k] + dt / 2)

        def deriv(t, s, interval=interval):
            return dubins_derivative(s, steering_control(s, t, schedule, ctrl, cfg.v, interval).u, cfg.v)

        try:
            record(k, interval)
            q[k + 1] = integrate_rk4(q[k], deriv, dt, ts[k])
        except (ValueError, FloatingPointError) as exc:
            raise SimulationAbort(f"aborted at t={ts[k]:.6g}: {exc}", partial(k)) from exc
    try:
        record(n, None)
    except ValueError as exc:
        raise SimulationAbort(f"aborted at t={ts[n]:.6g}: {exc}", partial(n)) from exc
    trace = SimTrace(ts, q, u_raw, u, r_err, psi_err, None, R)
    if traj is not None:
        trace.visible = verify_visibility(env, trace, traj, cfg.d_max, schedule.h_uav)[0]
    return trace


def simulate_open_loop_on_orbit(schedule: OrbitSchedule, theta0: float, direction: Direction, dt: float, t_span) -> SimTrace:
    """Fly the on-orbit curvature law from the on-orbit initial state; ``r_err`` measures drift off the orbit."""
    t0, tf = _clip_span(schedule, t_span)
    n = _n_steps((t0, tf), dt)
    dt = (tf - t0) / n
    v = schedule.v
    ts = t0 + dt * np.arange(n + 1)
    q0, _ = on_orbit_initial_state(schedule, t0, theta0, direction)
    state = np.array([*q0, theta0])
    rows = np.zeros((n + 1, 4))
    rows[0] = state
    u = np.zeros(n + 1)

    def rates(t, s, interval):
        th_dot, kappa = on_orbit_rates(v, orbit_sample(schedule, t, interval), s[3], direction)
        return th_dot, v * kappa

    for k in range(n):
        interval = schedule.interval(ts[k] + dt / 2)

        def deriv(t, s, interval=interval):
            th_dot, u_psi = rates(t, s, interval)
            return np.array([v * math.cos(s[2]), v * math.sin(s[2]), u_psi, th_dot])

        u[k] = rates(ts[k], rows[k], interval)[1]
        rows[k + 1] = integrate_rk4(rows[k], deriv, dt, ts[k])
    u[n] = rates(ts[n], rows[n], None)[1]
    R = np.array([orbit_sample(schedule, t).R for t in ts])
    centers = np.column_stack([np.interp(ts, schedule.times, schedule.centers[:, i]) for i in range(2)])
    r_err = np.hypot(*(rows[:, :2] - centers).T) - R
    return SimTrace(ts, rows[:, :3], u, u.copy(), r_err, np.full(n + 1, np.nan), None, R)


def poi_positions(traj: PoiTrajectory, ts) -> np.ndarray:
    ts = np.asarray(ts, dtype=float)
    return np.column_stack([np.interp(ts, traj.times, traj.waypoints[:, i]) for i in range(2)])


def verify_visibility(env: Environment, trace: SimTrace, traj: PoiTrajectory, d_max: float, h_uav: float) -> tuple[np.ndarray, float]:
    """Line-of-sight from the vehicle at altitude ``h_uav`` to the POI at every trace step."""
    g = poi_positions(traj, trace.t)
    rho = np.column_stack([trace.q[:, :2], np.full(len(trace.t), float(h_uav))])
    vis = los_visible_many(env, g, rho, d_max)
    return vis, float(vis.mean()) if len(vis) else 0.0


@dataclass
class Metrics:
    visibility_fraction: float
    visibility_fraction_converged: float
    converged: bool
    convergence_time: Optional[float]
    convergence_threshold: float
    r_err_mean: Optional[float]
    r_err_max: Optional[float]
    r_err_min: Optional[float]
    r_err_abs_mean: Optional[float]
    saturation_fraction: float
    max_abs_u: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def convergence_index(r_err, threshold: float) -> Optional[int]:
    """First index below ``threshold`` after which ``|r_err|`` never exceeds twice the threshold."""
    a = np.abs(np.asarray(r_err, dtype=float))
    above = np.flatnonzero(a > 2 * threshold)
    start = above[-1] + 1 if len(above) else 0
    below = np.flatnonzero(a[start:] < threshold)
    return int(start + below[0]) if len(below) else None


def compute_metrics(trace: SimTrace, convergence_threshold: Optional[float] = None) -> Metrics:
    if len(trace) == 0:
        raise ValueError("empty trace")
    if convergence_threshold is None:
        if trace.R is None:
            raise ValueError("convergence threshold required when the trace has no radius column")
        convergence_threshold = 0.05 * float(trace.R[0])
    k = convergence_index(trace.r_err, convergence_threshold)
    vis = trace.visible
    vis_all = float(np.mean(vis)) if vis is not None else float("nan")
    sat = float(np.mean(trace.u_raw != trace.u))
    umax = float(np.max(np.abs(trace.u)))
    if k is None:
        return Metrics(vis_all, float("nan"), False, None, convergence_threshold, None, None, None, None, sat, umax)
    tail = trace.r_err[k:]
    vis_conv = float(np.mean(vis[k:])) if vis is not None else float("nan")
    return Metrics(
        vis_all,
        vis_conv,
        True,
        float(trace.t[k]),
        convergence_threshold,
        float(tail.mean()),
        float(tail.max()),
        float(tail.min()),
        float(np.abs(tail).mean()),
        sat,
        umax,
    )


def metrics_text(m: Metrics, header: Optional[str] = None) -> str:
    """Stable ``key = value`` rendering; optional header comment first."""
    lines = [header.rstrip("\n")] if header else []
    for k, val in m.to_dict().items():
        lines.append(f"{k} = {'none' if val is None else repr(val) if not isinstance(val, bool) else str(val).lower()}")
    return "\n".join(lines) + "\n"


def static_schedule(center, R: float, v: float, t_span, direction: Direction = "CCW", h_uav: float = 0.0) -> OrbitSchedule:
    """Constant-radius orbit about a fixed point."""
    c = np.asarray(center, dtype=float)
    return OrbitSchedule([t_span[0], t_span[1]], [c, c], [R, R], dir_name(direction), v, 0.0, h_uav)


def linear_schedule(center0, velocity, R0: float, R_dot: float, v: float, t_span, direction: Direction = "CCW", h_uav: float = 0.0) -> OrbitSchedule:
    """Two-knot orbit with constant center velocity and radius rate."""
    c0 = np.asarray(center0, dtype=float)
    vel = np.asarray(velocity, dtype=float)
    T = t_span[1] - t_span[0]
    return OrbitSchedule(
        [t_span[0], t_span[1]], [c0, c0 + vel * T], [R0, R0 + R_dot * T], dir_name(direction), v, float(np.hypot(*vel)), h_uav
    )
