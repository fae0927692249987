"""
Time-varying circular orbits about the moving POI.

Between knots the orbit radius is linearly interpolated and the center moves
with the POI.  The radius rate is kept within ``v - v_g`` so a vehicle of
speed ``v`` can stay on the circle.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .env import Environment, PoiTrajectory
from .visibility import DEFAULT_N_RAYS, max_inscribed_radius

RATE_TOL = 1e-9

Direction = Union[str, int]


def dir_sign(direction: Direction) -> int:
    """+1 for counter-clockwise circulation, -1 for clockwise."""
    if isinstance(direction, str):
        d = direction.strip().upper()
        if d == "CCW":
            return 1
        if d == "CW":
            return -1
    elif direction in (1, -1):
        return int(direction)
    raise ValueError(f"direction must be 'CW' or 'CCW', got {direction!r}")


def dir_name(direction: Direction) -> str:
    return "CCW" if dir_sign(direction) > 0 else "CW"


@dataclass(frozen=True)
class OrbitSample:
    t: float
    g: np.ndarray
    g_dot: np.ndarray
    R: float
    R_dot: float


@dataclass(frozen=True, eq=False)
class OrbitSchedule:
    """Piecewise-linear orbit radii at knot times, centered on the POI.

    Attributes
    ----------
    times : (m,) array
        Knot times, strictly increasing.
    centers : (m, 2) array
        POI position at each knot.  Knots must include every POI waypoint so
        that linear interpolation of the centers reproduces the POI path.
    radii : (m,) array
        Orbit radius at each knot.
    """

    times: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    direction: str = "CCW"
    v: float = 1.0
    v_g: float = 0.0
    h_uav: float = 0.0

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        c = np.array(self.centers, dtype=float).reshape(-1, 2)
        r = np.array(self.radii, dtype=float).reshape(-1)
        if len(t) < 2 or len(c) != len(t) or len(r) != len(t):
            raise ValueError("a schedule needs at least two knots with matching times, centers and radii")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be strictly increasing")
        if np.any(r <= 0):
            raise ValueError("orbit radii must be positive")
        rate = np.abs(np.diff(r)) / np.diff(t)
        if np.any(rate > self.v - self.v_g + RATE_TOL):
            k = int(np.argmax(rate))
            raise ValueError(f"radius rate {rate[k]:.6g} on interval {k} exceeds v - v_g = {self.v - self.v_g:.6g}")
        for a in (t, c, r):
            a.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "direction", dir_name(self.direction))

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def interval(self, t: float, side: str = "left") -> int:
        """Index ``k`` of the interval ``[t_k, t_{k+1}]`` holding ``t``.

        ``side="left"`` assigns a knot time to the interval ending there,
        ``side="right"`` to the one starting there.
        """
        k = int(np.searchsorted(self.times, t, side=side)) - 1
        return min(max(k, 0), len(self.times) - 2)

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "v": self.v,
            "v_g": self.v_g,
            "h_UAV": self.h_uav,
            "knots": [
                {"t": float(t), "g": [float(c[0]), float(c[1])], "R": float(r)}
                for t, c, r in zip(self.times, self.centers, self.radii)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OrbitSchedule":
        knots = data["knots"]
        return cls(
            [k["t"] for k in knots],
            [k["g"] for k in knots],
            [k["R"] for k in knots],
            data.get("direction", "CCW"),
            float(data["v"]),
            float(data["v_g"]),
            float(data.get("h_UAV", 0.0)),
        )


def save_schedule(schedule: OrbitSchedule, path, extra: Optional[dict] = None):
    data = dict(extra or {})
    data.update(schedule.to_dict())
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_schedule(path) -> OrbitSchedule:
    with open(path) as fh:
        return OrbitSchedule.from_dict(json.load(fh))


def orbit_sample(schedule: OrbitSchedule, t: float, interval: Optional[int] = None, side: str = "left") -> OrbitSample:
    """Orbit center, radius and their rates at ``t``.

    Rates are left-continuous at knots unless ``side="right"`` or an explicit
    ``interval`` is given.
    """
    tol = 1e-9 * max(1.0, abs(schedule.t_end))
    if t < schedule.t_start - tol or t > schedule.t_end + tol:
        raise ValueError(f"t={t} outside schedule span [{schedule.t_start}, {schedule.t_end}]")
    k = schedule.interval(t, side) if interval is None else int(interval)
    t0, t1 = schedule.times[k], schedule.times[k + 1]
    dt = t1 - t0
    R_dot = (schedule.radii[k + 1] - schedule.radii[k]) / dt
    g_dot = (schedule.centers[k + 1] - schedule.centers[k]) / dt
    R = schedule.radii[k] + R_dot * (t - t0)
    g = schedule.centers[k] + g_dot * (t - t0)
    return OrbitSample(float(t), g, g_dot, float(R), float(R_dot))


def _polar_terms(sample: OrbitSample, theta: float) -> tuple[float, float]:
    """(ġ·e_r, ġ·e_θ) at polar angle ``theta``."""
    c, s = math.cos(theta), math.sin(theta)
    gx, gy = sample.g_dot
    return gx * c + gy * s, -gx * s + gy * c


def _tangential_root(v: float, sample: OrbitSample, theta: float) -> float:
    g_r, _ = _polar_terms(sample, theta)
    disc = v * v - (g_r + sample.R_dot) ** 2
    if disc < 0:
        if disc > -1e-12 * v * v:
            return 0.0
        raise ValueError("vehicle too slow to remain on the orbit at this polar angle")
    return math.sqrt(disc)


def polar_angle_rate(v: float, sample: OrbitSample, theta: float, direction: Direction) -> float:
    """Rate of the polar angle of a vehicle that stays on the moving orbit."""
    _, g_t = _polar_terms(sample, theta)
    return (-g_t + dir_sign(direction) * _tangential_root(v, sample, theta)) / sample.R


def orbit_curvature(v: float, sample: OrbitSample, theta: float, direction: Direction) -> float:
    """Unsigned path curvature of the on-orbit vehicle."""
    root = _tangential_root(v, sample, theta)
    if root == 0:
        raise ValueError("tangential speed vanishes; curvature undefined")
    th_dot = polar_angle_rate(v, sample, theta, direction)
    return sample.R * th_dot * th_dot / (v * root)


def radius_rate_bounds(v: float, v_g: float) -> tuple[float, float]:
    if not v > v_g >= 0:
        raise ValueError(f"need v > v_g >= 0 (v={v}, v_g={v_g})")
    return v_g - v, v - v_g


def min_feasible_radius(v: float, v_g: float, kappa_max: float) -> float:
    """Smallest radius whose worst-case on-orbit curvature is within ``kappa_max``."""
    if not kappa_max > 0:
        raise ValueError("kappa_max must be positive")
    if v_g > v:
        raise ValueError("v_g must not exceed v")
    return (v_g / v + 1.0) ** 2 / kappa_max


def curvature_cost(a, b, c, d, t=0.0, direction: Direction = "CCW", v: float = 1.0):
    """Orbit curvature as a function of ``a = θ−γ``, ``b = v_g/v``, ``c = Ṙ/v`` and ``d = R₀``.

    Scaled so that ``v = 1`` gives curvature in 1/m for ``R = d + v c t``.
    Vectorized over array arguments.  Where the tangential speed vanishes the
    curvature is undefined and nan is returned.
    """
    a, b, c, d, t = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c, d, t)))
    if np.any(np.abs(b + c) > 1 + 1e-12) or np.any(np.abs(c - b) > 1 + 1e-12):
        raise ValueError("need |b + c| <= 1 and |c - b| <= 1")
    R = d + v * c * t
    if np.any(R <= 0):
        raise ValueError("radius d + v*c*t must be positive")
    root = np.sqrt(np.clip(1.0 - (b * np.cos(a) + c) ** 2, 0.0, None))
    num = (b * np.sin(a) + dir_sign(direction) * root) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        J = num / (R * root)
    J = np.where(root == 0, np.nan, J)
    return J[()] if J.ndim == 0 else J


# -- Algorithm 1 -------------------------------------------------------------


@dataclass
class Infeasible:
    """Why no orbit schedule exists: the first knot whose radius is too small."""

    index: int
    radius: float
    threshold: float
    point: tuple[float, float]
    t: float
    reason: str = "radius below minimum feasible radius"
    raw_radii: np.ndarray = field(default=None, repr=False)
    radii: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "status": "infeasible",
            "reason": self.reason,
            "index": self.index,
            "point": list(self.point),
            "t": self.t,
            "radius": self.radius,
            "threshold": self.threshold,
        }


def clamp_radii(radii, times, v: float, v_g: float) -> np.ndarray:
    """Shrink radii so consecutive rates never exceed ``v - v_g``."""
    R = np.array(radii, dtype=float)
    dt = np.diff(np.asarray(times, dtype=float))
    rate = v - v_g
    for i in range(len(R) - 1):
        R[i + 1] = min(R[i + 1], R[i] + rate * dt[i])
    for i in range(len(R) - 2, -1, -1):
        R[i] = min(R[i], R[i + 1] + rate * dt[i])
    return R


def _thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("OCCLUSION_ORBIT_THREADS", "1")))
    except ValueError:
        return 1


def inscribed_radii(env: Environment, points, h_uav: float, d_max: float, n_rays: int = DEFAULT_N_RAYS) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    job = lambda p: max_inscribed_radius(env, p, h_uav, d_max, n_rays)  # noqa: E731
    workers = min(_thread_cap(), len(pts))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return np.array(list(pool.map(job, pts)))
    return np.array([job(p) for p in pts])


def build_orbit_schedule(
    env: Environment,
    traj: PoiTrajectory,
    points,
    times,
    kappa_max: float,
    v: float,
    h_uav: float,
    d_max: float,
    n_rays: int = DEFAULT_N_RAYS,
    direction: Direction = "CCW",
    raw_radii: Optional[Sequence[float]] = None,
) -> Union[OrbitSchedule, Infeasible]:
    """Inscribed-circle radii along the POI path, rate-limited, with a curvature feasibility check.

    ``raw_radii`` bypasses the visibility computation (used for constructed cases).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    times = np.asarray(times, dtype=float)
    v_g = traj.v_g
    if v_g > v:
        raise ValueError(f"POI speed {v_g} exceeds vehicle speed {v}")
    raw = inscribed_radii(env, pts, h_uav, d_max, n_rays) if raw_radii is None else np.asarray(raw_radii, dtype=float)
    R = clamp_radii(raw, times, v, v_g)
    threshold = min_feasible_radius(v, v_g, kappa_max)
    for i, r in enumerate(R):
        if r <= 0 or r < threshold:
            reason = "POI fully occluded at this point" if raw[i] <= 0 else "radius below minimum feasible radius"
            return Infeasible(i, float(r), threshold, (float(pts[i, 0]), float(pts[i, 1])), float(times[i]), reason, raw, R)
    return OrbitSchedule(times, pts, R, dir_name(direction), v, v_g, h_uav)


# -- on-orbit motion ---------------------------------------------------------


def on_orbit_initial_state(schedule: OrbitSchedule, t0: float, theta0: float, direction: Direction = None):
    """Configuration on the orbit at ``t0`` and polar angle ``theta0``, heading along the orbit-following velocity.

    Returns ``(q0, theta_dot0)`` with ``q0 = array([x, y, psi])``.
    """
    direction = schedule.direction if direction is None else direction
    smp = orbit_sample(schedule, t0, side="right")
    th_dot = polar_angle_rate(schedule.v, smp, theta0, direction)
    er = np.array([math.cos(theta0), math.sin(theta0)])
    et = np.array([-er[1], er[0]])
    pos = smp.g + smp.R * er
    vel = smp.g_dot + smp.R_dot * er + smp.R * th_dot * et
    return np.array([pos[0], pos[1], math.atan2(vel[1], vel[0])]), th_dot


def on_orbit_rates(v: float, sample: OrbitSample, theta: float, direction: Direction) -> tuple[float, float]:
    """Polar angle rate and signed path curvature of a vehicle riding the orbit."""
    root = _tangential_root(v, sample, theta)
    if root == 0:
        raise ValueError("tangential speed vanishes; signed curvature undefined")
    _, g_t = _polar_terms(sample, theta)
    sign = dir_sign(direction)
    th_dot = (-g_t + sign * root) / sample.R
    return th_dot, (sign * (-th_dot * g_t) / root + th_dot) / v


def open_loop_curvature_control(
    schedule: OrbitSchedule, t: float, theta: float, direction: Direction = None, interval: Optional[int] = None
) -> float:
    """Signed curvature keeping an on-orbit vehicle on the orbit; turn rate is ``v * kappa``."""
    direction = schedule.direction if direction is None else direction
    return on_orbit_rates(schedule.v, orbit_sample(schedule, t, interval), theta, direction)[1]
