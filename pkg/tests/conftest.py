import math

import numpy as np
import pytest

from occlusion_orbit.env import Environment, Obstacle, Polygon


def wall_env(x0=20.0, height=40.0, h_feasible=200.0, thickness=10.0, half_len=50.0):
    """One long wall perpendicular to +x, its near face at ``x0``."""
    return Environment((Obstacle(Polygon.rectangle(x0, -half_len, x0 + thickness, half_len), height),), h_feasible)


def canyon_env(x_end=100.0, height=40.0):
    """Two walls hugging the x-axis road on both sides, ending at ``x_end``."""
    return Environment(
        (
            Obstacle(Polygon.rectangle(-80, 3, x_end, 13), height),
            Obstacle(Polygon.rectangle(-80, -13, x_end, -3), height),
        ),
        200.0,
    )


def random_env(rng, n=4, h_feasible=200.0):
    """Disjoint random boxes on a coarse grid of slots, keeping the origin clear."""
    slots = [(i, j) for i in range(-2, 3) for j in range(-2, 3) if (i, j) != (0, 0)]
    picks = rng.choice(len(slots), size=n, replace=False)
    obs = []
    for k in picks:
        i, j = slots[k]
        cx, cy = 40.0 * i, 40.0 * j
        w, h = rng.uniform(5, 15, size=2)
        obs.append(Obstacle(Polygon.rectangle(cx - w, cy - h, cx + w, cy + h), float(rng.uniform(20, 80))))
    return Environment(tuple(obs), h_feasible)


def prism_blocks(env, g, rho, n=20001):
    """Dense sampling of the 3D sight line against the extruded obstacles."""
    s = np.linspace(0.0, 1.0, n)
    pts = np.asarray(g, dtype=float)[None, :] + s[:, None] * (np.asarray(rho[:2], dtype=float) - np.asarray(g, dtype=float))[None, :]
    z = s * rho[2]
    from occlusion_orbit.env import _points_in_polygon

    for ob in env.obstacles:
        lo, hi = ob.base.vertices.min(axis=0), ob.base.vertices.max(axis=0)
        cand = (z <= ob.height) & np.all((pts >= lo) & (pts <= hi), axis=1)
        if cand.any() and _points_in_polygon(ob.base, pts[cand]).any():
            return True
    return False


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def empty_env():
    return Environment((), 200.0)


@pytest.fixture
def wall():
    return wall_env()


def angle_close(a, b, tol):
    return abs(math.remainder(a - b, 2 * math.pi)) < tol


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
