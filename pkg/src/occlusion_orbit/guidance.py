"""
Constant-speed guidance field about a moving, morphing circular orbit.

In polar coordinates about the POI the field has a radial part that attracts
toward ``r = R(t)`` while feeding forward the orbit motion, and a tangential
part chosen so the total speed equals ``v``:

    u_r = -Φ′ + Ṙ + ġ·e_r,     u_θ = ±sqrt(v² − u_r²)
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .orbit import OrbitSample, OrbitSchedule, dir_sign, orbit_sample

R_GUARD = 1e-6


def wrap_angle(a):
    """Wrap to (−π, π]."""
    if np.ndim(a) == 0:
        w = math.remainder(float(a), 2 * math.pi)
        return math.pi if w == -math.pi else w
    w = np.remainder(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class FieldSample:
    u: np.ndarray
    u_r: float
    u_theta: float
    psi_d: float
    psi_d_dot: float
    r: float
    theta: float
    r_err: float
    phi_prime: float
    g_dot_er: float
    g_dot_et: float
    R_dot: float


def _margin(v: float, v_g: float, R_dot: float) -> float:
    m = v - v_g - abs(R_dot)
    if not m > 0:
        raise ValueError(f"v - v_g - |R_dot| must be positive (got {m:.6g})")
    return m


def attraction_level_a1(xi, sample: OrbitSample, beta: float) -> float:
    r = math.hypot(xi[0] - sample.g[0], xi[1] - sample.g[1])
    return math.atan(beta * (r - sample.R))


def attraction_level_a1_dt(xi, sample: OrbitSample, beta: float) -> float:
    dx, dy = xi[0] - sample.g[0], xi[1] - sample.g[1]
    r = math.hypot(dx, dy)
    if r <= R_GUARD:
        raise ValueError("query point coincides with the orbit center")
    g_r = (sample.g_dot[0] * dx + sample.g_dot[1] * dy) / r
    r_err = r - sample.R
    return beta / (1 + (beta * r_err) ** 2) * (-sample.R_dot - g_r)


def phi_prime(v: float, v_g: float, R_dot: float, beta: float, r: float, R: float) -> float:
    return _margin(v, v_g, R_dot) * (2 / math.pi) * math.atan(beta * (r - R))


def _evaluate(xi, sample: OrbitSample, v: float, v_g: float, beta: float, sign: int) -> FieldSample:
    dx, dy = xi[0] - sample.g[0], xi[1] - sample.g[1]
    r = math.hypot(dx, dy)
    if r <= R_GUARD:
        raise ValueError(f"query point within guard radius of the orbit center (r={r:.3g})")
    c, s = dx / r, dy / r
    gx, gy = sample.g_dot
    g_r = gx * c + gy * s
    g_t = -gx * s + gy * c
    margin = _margin(v, v_g, sample.R_dot)
    r_err = r - sample.R
    z = beta * r_err
    at = math.atan(z)
    phi = margin * (2 / math.pi) * at
    u_r = -phi + sample.R_dot + g_r
    disc = v * v - u_r * u_r
    if disc <= 0:
        raise ValueError("radial field component reaches the vehicle speed")
    u_t = sign * math.sqrt(disc)
    u = np.array([u_r * c - u_t * s, u_r * s + u_t * c])
    phi_dot = -(4 / math.pi**2) * at * beta * margin * margin / (1 + z * z)
    th_dot = (u_t - g_t) / r
    psi_d_dot = (phi_dot + r * th_dot * th_dot) / u_t
    psi_d = wrap_angle(math.atan2(u[1], u[0]))
    return FieldSample(u, u_r, u_t, psi_d, psi_d_dot, r, math.atan2(dy, dx), r_err, phi, g_r, g_t, sample.R_dot)


def vector_field(xi, t: float, schedule: OrbitSchedule, v: float, beta: float, interval: Optional[int] = None) -> FieldSample:
    if not beta > 0:
        raise ValueError("beta must be positive")
    smp = orbit_sample(schedule, t, interval)
    return _evaluate(xi, smp, v, schedule.v_g, beta, dir_sign(schedule.direction))


def psi_d_dot(xi, t: float, schedule: OrbitSchedule, v: float, beta: float, interval: Optional[int] = None) -> float:
    return vector_field(xi, t, schedule, v, beta, interval).psi_d_dot


def field_arrays(xs, ys, sample: OrbitSample, v: float, v_g: float, beta: float, direction="CCW") -> dict:
    """Vectorized field over query points ``(xs, ys)`` (any matching shapes).

    Points inside the guard radius yield nan.
    """
    xs, ys = np.broadcast_arrays(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
    margin = _margin(v, v_g, sample.R_dot)
    dx, dy = xs - sample.g[0], ys - sample.g[1]
    r = np.hypot(dx, dy)
    ok = r > R_GUARD
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(ok, dx / r, np.nan)
        s = np.where(ok, dy / r, np.nan)
        g_r = sample.g_dot[0] * c + sample.g_dot[1] * s
        g_t = -sample.g_dot[0] * s + sample.g_dot[1] * c
        z = beta * (r - sample.R)
        at = np.arctan(z)
        u_r = -margin * (2 / np.pi) * at + sample.R_dot + g_r
        u_t = dir_sign(direction) * np.sqrt(v * v - u_r * u_r)
        ux = u_r * c - u_t * s
        uy = u_r * s + u_t * c
        phi_dot = -(4 / np.pi**2) * at * beta * margin**2 / (1 + z * z)
        th_dot = (u_t - g_t) / r
        pdd = (phi_dot + r * th_dot**2) / u_t
    return {
        "x": xs,
        "y": ys,
        "u_x": ux,
        "u_y": uy,
        "psi_d": wrap_angle(np.arctan2(uy, ux)),
        "psi_d_dot": pdd,
        "u_r": u_r,
        "u_theta": u_t,
        "r": r,
    }


def field_grid(schedule: OrbitSchedule, t: float, v: float, beta: float, x_range, y_range, nx: int, ny: int) -> dict:
    """Field on a regular grid; points within the guard radius are dropped."""
    smp = orbit_sample(schedule, t)
    X, Y = np.meshgrid(np.linspace(*x_range, nx), np.linspace(*y_range, ny), indexing="xy")
    out = field_arrays(X.ravel(), Y.ravel(), smp, v, schedule.v_g, beta, schedule.direction)
    keep = out["r"] > R_GUARD
    return {k: a[keep] for k, a in out.items()}


def field_csv(data: dict, header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(header.rstrip("\n") + "\n")
    cols = ["x", "y", "u_x", "u_y", "psi_d", "psi_d_dot"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*(data[c] for c in cols)):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()
