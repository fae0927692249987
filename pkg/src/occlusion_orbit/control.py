"""
Heading controller for the Dubins vehicle tracking the guidance field.

    u_ψ = −k_ψ ψ̃ + ψ̇_d + u_lyap,    ψ̃ = wrap(q_ψ − ψ_d)

``u_lyap`` cancels the cross term between heading and radial errors in the
Lyapunov function ``V₂ = (1/π) arctan²(β r̃) + ψ̃²/2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .guidance import _evaluate, _margin, wrap_angle
from .orbit import OrbitSchedule, dir_sign, orbit_sample

SERIES_EPS = 1e-4


@dataclass(frozen=True)
class ControllerConfig:
    beta: float
    k_psi: float
    u_psi_max: float
    tau_inner: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.u_psi_max > 0:
            raise ValueError("u_psi_max must be positive")
        if not 0 < self.tau_inner <= 1:
            raise ValueError("tau_inner must lie in (0, 1]")

    @classmethod
    def for_vehicle(cls, v: float, r_min: float, beta: float, k_psi: float, tau_inner: float = 1.0) -> "ControllerConfig":
        return cls(beta, k_psi, v / r_min, tau_inner)


@dataclass(frozen=True)
class ControlOutput:
    u_raw: float
    u: float
    proportional: float
    feedforward: float
    u_lyap: float
    psi_err: float
    r_err: float


def versinc(x: float) -> float:
    """(1 − cos x)/x, exact at 0."""
    if abs(x) < SERIES_EPS:
        return x / 2 - x**3 / 24
    return (1 - math.cos(x)) / x


def sinc(x: float) -> float:
    """sin(x)/x, exact at 0."""
    if abs(x) < SERIES_EPS:
        return 1 - x * x / 6
    return math.sin(x) / x


def _versinc_arr(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_EPS
    safe = np.where(small, 1.0, x)
    return np.where(small, x / 2 - x**3 / 24, (1 - np.cos(safe)) / safe)


def _sinc_arr(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < SERIES_EPS
    safe = np.where(small, 1.0, x)
    return np.where(small, 1 - x * x / 6, np.sin(safe) / safe)


def saturate(u, limit: float):
    return np.clip(u, -limit, limit) if np.ndim(u) else min(max(float(u), -limit), limit)


def steering_control(q, t: float, schedule: OrbitSchedule, cfg: ControllerConfig, v: float, interval: Optional[int] = None) -> ControlOutput:
    smp = orbit_sample(schedule, t, interval)
    f = _evaluate(q, smp, v, schedule.v_g, cfg.beta, dir_sign(schedule.direction))
    x = wrap_angle(q[2] - f.psi_d)
    z = cfg.beta * f.r_err
    gain = cfg.beta * (2 / math.pi) * math.atan(z) / (1 + z * z)
    u_lyap = ((f.g_dot_er + f.R_dot) * versinc(x) + f.u_theta * sinc(x)) * gain
    prop = -cfg.k_psi * x
    raw = prop + f.psi_d_dot + u_lyap
    return ControlOutput(raw, saturate(raw, cfg.u_psi_max), prop, f.psi_d_dot, u_lyap, x, f.r_err)


# -- gain bounds -------------------------------------------------------------


def _bisect(fn, lo: float, hi: float, tol: float = 1e-14) -> float:
    flo = fn(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def epsilon_root() -> float:
    return _bisect(lambda x: x * math.atan(x) - 1.0, 1.0, 2.0)


def lambda_root() -> float:
    return _bisect(lambda x: x * math.atan(x) - 0.5, 0.5, 1.0)


def epsilon_max() -> float:
    """max over x of arctan²(x)/(1+x²)."""
    x = epsilon_root()
    return math.atan(x) ** 2 / (1 + x * x)


def lambda_max() -> float:
    """max over x of arctan(x)/(1+x²)."""
    x = lambda_root()
    return math.atan(x) / (1 + x * x)


def min_gain(v: float, beta: float) -> float:
    """Heading gain above which the Lyapunov derivative is negative away from the orbit."""
    return v * beta * (4 / math.pi**2) * epsilon_max()


def lyapunov_v2(r_err, psi_err, beta: float):
    return (1 / np.pi) * np.arctan(beta * np.asarray(r_err)) ** 2 + np.asarray(psi_err) ** 2 / 2


def v2_dot(r_err, psi_err, beta: float, k_psi: float, v: float, v_g: float, R_dot: float):
    """Time derivative of ``V₂`` along closed-loop trajectories (before saturation)."""
    margin = _margin(v, v_g, R_dot)
    z = beta * np.asarray(r_err, dtype=float)
    psi_err = np.asarray(psi_err, dtype=float)
    return -k_psi * psi_err**2 - margin * np.cos(psi_err) * beta * (4 / np.pi**2) * np.arctan(z) ** 2 / (1 + z * z)


# -- β tuning ----------------------------------------------------------------


@dataclass(frozen=True)
class BetaGrid:
    n_r: int = 400
    r_max_factor: float = 5.0
    n_theta: int = 360
    n_psi: int = 720

    def __post_init__(self):
        if min(self.n_r, self.n_theta, self.n_psi) < 1 or not self.r_max_factor > 0:
            raise ValueError("grid resolution must be positive")


@dataclass
class BetaReport:
    max_turn_rate: float
    r: float
    theta_rel: float
    psi_err: float
    passed: bool
    u_psi_max: float
    inputs: dict
    grid: dict

    def to_dict(self) -> dict:
        return {
            "max_turn_rate": self.max_turn_rate,
            "argmax": {"r": self.r, "theta_minus_gamma": self.theta_rel, "psi_err": self.psi_err},
            "u_psi_max": self.u_psi_max,
            "pass": self.passed,
            "inputs": self.inputs,
            "grid": self.grid,
        }


def tune_beta_grid(
    v: float,
    v_g: float,
    R: float,
    R_dot: float,
    beta: float,
    tau_inner: float,
    u_psi_max: float,
    grid_spec: BetaGrid = BetaGrid(),
    direction="CCW",
) -> BetaReport:
    """Grid maximum of ``|ψ̇_d + u_lyap|`` over ``r ∈ [τR, 5R]``, all polar angles and all headings.

    The POI heading is fixed to zero without loss of generality, so polar
    angles are reported relative to it.  Headings are sampled through the
    heading error ``ψ̃ ∈ (−π, π]``.
    """
    margin = _margin(v, v_g, R_dot)
    sign = dir_sign(direction)
    rs = np.linspace(tau_inner * R, grid_spec.r_max_factor * R, grid_spec.n_r)
    th = -np.pi + 2 * np.pi * (np.arange(grid_spec.n_theta) + 1) / grid_spec.n_theta
    x = -np.pi + 2 * np.pi * (np.arange(grid_spec.n_psi) + 1) / grid_spec.n_psi
    vers, sn = _versinc_arr(x), _sinc_arr(x)
    g_r = v_g * np.cos(th)
    g_t = -v_g * np.sin(th)
    best, arg = -1.0, (0, 0, 0)
    for i, r in enumerate(rs):
        z = beta * (r - R)
        at = math.atan(z)
        u_r = -margin * (2 / math.pi) * at + R_dot + g_r
        u_t = sign * np.sqrt(v * v - u_r * u_r)
        phi_dot = -(4 / math.pi**2) * at * beta * margin**2 / (1 + z * z)
        th_dot = (u_t - g_t) / r
        pdd = (phi_dot + r * th_dot**2) / u_t
        gain = beta * (2 / math.pi) * at / (1 + z * z)
        total = np.abs(pdd[:, None] + gain * ((g_r + R_dot)[:, None] * vers[None, :] + u_t[:, None] * sn[None, :]))
        k = int(np.argmax(total))
        if total.flat[k] > best:
            best = float(total.flat[k])
            arg = (i, *np.unravel_index(k, total.shape))
    i, j, k = arg
    return BetaReport(
        best,
        float(rs[i]),
        float(th[j]),
        float(x[k]),
        best <= u_psi_max,
        u_psi_max,
        {"v": v, "v_g": v_g, "R": R, "R_dot": R_dot, "beta": beta, "tau_inner": tau_inner, "direction": "CCW" if sign > 0 else "CW"},
        asdict(grid_spec),
    )
