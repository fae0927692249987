"""
Line-of-sight visibility from a ground target.

A point ``rho`` in the airspace sees the target ``g`` when it lies inside the
feasible altitude band, within sensing range, and no extruded obstacle cuts
the sight line.  For an extruded polygon the sight line rises linearly from
the ground, so obstacle ``i`` blocks it exactly when the ground projection
enters the base at fraction ``s1`` with ``s1 * rho_z <= h_i``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import (
    EPS,
    Environment,
    PoiTrajectory,
    first_entry_many,
    first_entry_paired,
    point_in_polygon,
    segment_polygon_entry,
)

DEFAULT_CELL = 2.0
DEFAULT_N_RAYS = 720


def _in_band(env: Environment, z) -> np.ndarray | bool:
    return (z > env.h_building) & (z < env.h_feasible)


def los_visible(env: Environment, g, rho, d_max: float) -> bool:
    """True when the airspace point ``rho = (x, y, z)`` sees the ground point ``g``."""
    gx, gy = float(g[0]), float(g[1])
    x, y, z = (float(c) for c in rho)
    if z <= 0:
        raise ValueError("rho must be above the ground")
    if math.sqrt((x - gx) ** 2 + (y - gy) ** 2 + z * z) > d_max:
        return False
    if not _in_band(env, z):
        return False
    horizontal = math.hypot(x - gx, y - gy)
    for ob in env.obstacles:
        if horizontal <= EPS:
            s1 = 0.0 if point_in_polygon(ob.base, (gx, gy)) else None
        else:
            s1 = segment_polygon_entry((gx, gy), (x, y), ob.base)
        if s1 is not None and s1 * z <= ob.height:
            return False
    return True


def los_visible_many(env: Environment, g, rho, d_max: float) -> np.ndarray:
    """Batch :func:`los_visible`.

    ``g`` is either one target shared by all queries or an (N, 2) array paired
    with the (N, 3) array ``rho``.
    """
    rho = np.asarray(rho, dtype=float).reshape(-1, 3)
    g = np.asarray(g, dtype=float)
    shared = g.ndim == 1
    gg = np.broadcast_to(g, (len(rho), 2))
    dz = rho[:, 2]
    if np.any(dz <= 0):
        raise ValueError("rho must be above the ground")
    dist = np.sqrt(((rho[:, :2] - gg) ** 2).sum(axis=1) + dz * dz)
    visible = (dist <= d_max) & _in_band(env, dz)
    for ob in env.obstacles:
        if shared:
            s1 = first_entry_many(g, rho[:, :2], ob.base)
        else:
            s1 = first_entry_paired(gg, rho[:, :2], ob.base)
        visible &= ~(s1 * dz <= ob.height)
    return visible


# -- slices at constant altitude ---------------------------------------------


def _range_limit(h: float, d_max: float) -> float:
    if d_max <= h:
        raise ValueError(f"no feasible slice: d_max ({d_max}) must exceed the altitude ({h})")
    return math.sqrt(d_max * d_max - h * h)


def _check_slice(env: Environment, h: float):
    if not (env.h_building < h < env.h_feasible):
        raise ValueError(f"altitude {h} outside the feasible band ({env.h_building}, {env.h_feasible})")


def ray_visibility_limit(env: Environment, g, theta: float, h: float, d_max: float) -> float:
    """Largest horizontal distance along heading ``theta`` from ``g`` still visible at altitude ``h``.

    Returned as a supremum: points strictly closer are visible.
    """
    _check_slice(env, h)
    reach = _range_limit(h, d_max)
    g = np.asarray(g, dtype=float)
    end = g + reach * np.array([math.cos(theta), math.sin(theta)])
    limit = reach
    for ob in env.obstacles:
        s1 = segment_polygon_entry(g, end, ob.base)
        if s1 is not None:
            limit = min(limit, s1 * reach * h / ob.height)
    return limit


def ray_limits(env: Environment, g, h: float, d_max: float, n_rays: int = DEFAULT_N_RAYS) -> tuple[np.ndarray, np.ndarray]:
    """Per-ray visibility limits for ``n_rays`` uniformly spaced headings."""
    _check_slice(env, h)
    reach = _range_limit(h, d_max)
    g = np.asarray(g, dtype=float)
    theta = 2 * np.pi * np.arange(n_rays) / n_rays
    ends = g + reach * np.column_stack([np.cos(theta), np.sin(theta)])
    limit = np.full(n_rays, reach)
    for ob in env.obstacles:
        s1 = first_entry_many(g, ends, ob.base)
        limit = np.minimum(limit, s1 * reach * h / ob.height)
    return theta, limit


def max_inscribed_radius(env: Environment, g, h: float, d_max: float, n_rays: int = DEFAULT_N_RAYS) -> float:
    """Radius of the largest circle about ``g`` inside the visibility slice at altitude ``h``."""
    if n_rays < 8:
        raise ValueError("n_rays must be at least 8")
    _, limit = ray_limits(env, g, h, d_max, n_rays)
    return float(limit.min())


def max_inscribed_radius_bisection(
    env: Environment, g, h: float, d_max: float, tol: float = 1e-3, n_rays: int = DEFAULT_N_RAYS
) -> float:
    """Bisection on the candidate radius using point visibility tests on the circle."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = np.asarray(g, dtype=float)
    theta = 2 * np.pi * np.arange(n_rays) / n_rays
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    lo, hi = 0.0, float(d_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        pts = np.column_stack([g + mid * dirs, np.full(n_rays, h)])
        if np.all(los_visible_many(env, g, pts, d_max)):
            lo = mid
        else:
            hi = mid
    return lo


# -- voxel visibility volumes ------------------------------------------------


@dataclass(frozen=True, eq=False)
class VisibilityVolumeGrid:
    """Voxelized visibility volume on a world-aligned lattice.

    Cell ``(i, j, k)`` of ``occupancy`` covers
    ``[(index_origin + (i, j, k)) * cell, (index_origin + (i, j, k) + 1) * cell]``.
    """

    target: tuple[float, float]
    cell: float
    index_origin: tuple[int, int, int]
    occupancy: np.ndarray

    @property
    def origin(self) -> tuple[float, float]:
        return self.index_origin[0] * self.cell, self.index_origin[1] * self.cell

    @property
    def base_altitude(self) -> float:
        return self.index_origin[2] * self.cell

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.occupancy.shape)

    @property
    def volume(self) -> float:
        return int(np.count_nonzero(self.occupancy)) * self.cell**3

    def centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ix0, iy0, iz0 = self.index_origin
        nx, ny, nz = self.dims
        c = self.cell
        return (ix0 + np.arange(nx) + 0.5) * c, (iy0 + np.arange(ny) + 0.5) * c, (iz0 + np.arange(nz) + 0.5) * c


def build_vv_grid(env: Environment, g, d_max: float, cell: float = DEFAULT_CELL) -> VisibilityVolumeGrid:
    if not cell > 0:
        raise ValueError("cell size must be positive")
    if cell > d_max:
        raise ValueError(f"cell size {cell} larger than d_max {d_max}")
    gx, gy = float(g[0]), float(g[1])
    ix0 = math.floor((gx - d_max) / cell)
    ix1 = math.ceil((gx + d_max) / cell)
    iy0 = math.floor((gy - d_max) / cell)
    iy1 = math.ceil((gy + d_max) / cell)
    lower, upper = env.h_building, min(env.h_feasible, d_max)
    iz0 = math.floor(lower / cell)
    iz1 = math.ceil(upper / cell)
    zc = (np.arange(iz0, iz1) + 0.5) * cell
    keep = (zc > lower) & (zc <= upper)
    if np.any(keep):
        iz0 = iz0 + int(np.argmax(keep))
        zc = zc[keep]
    else:
        zc = zc[:0]
    xc = (np.arange(ix0, ix1) + 0.5) * cell
    yc = (np.arange(iy0, iy1) + 0.5) * cell
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    cols = np.column_stack([X.ravel(), Y.ravel()])
    horiz2 = (cols[:, 0] - gx) ** 2 + (cols[:, 1] - gy) ** 2
    occ = (horiz2[:, None] + zc[None, :] ** 2 <= d_max * d_max) & _in_band(env, zc)[None, :]
    for ob in env.obstacles:
        s1 = first_entry_many((gx, gy), cols, ob.base)
        occ &= ~(s1[:, None] * zc[None, :] <= ob.height)
    occ = occ.reshape(len(xc), len(yc), len(zc))
    return VisibilityVolumeGrid((gx, gy), float(cell), (ix0, iy0, iz0), occ)


def vv_xor_volume(a: VisibilityVolumeGrid, b: VisibilityVolumeGrid) -> float:
    """Volume (m^3) of cells visible in exactly one of the two grids."""
    if abs(a.cell - b.cell) > 1e-12 * max(a.cell, b.cell):
        raise ValueError(f"cell sizes differ ({a.cell} vs {b.cell})")
    lo = np.minimum(a.index_origin, b.index_origin)
    hi = np.maximum(np.add(a.index_origin, a.dims), np.add(b.index_origin, b.dims))
    shape = tuple(int(v) for v in hi - lo)
    total = np.zeros(shape, dtype=np.uint8)
    for grid in (a, b):
        off = np.subtract(grid.index_origin, lo)
        nx, ny, nz = grid.dims
        total[off[0] : off[0] + nx, off[1] : off[1] + ny, off[2] : off[2] + nz] += grid.occupancy
    return int(np.count_nonzero(total == 1)) * a.cell**3


def vv_to_text(grid: VisibilityVolumeGrid, header: str = "# occlusion-orbit vvgrid v1") -> str:
    flat = grid.occupancy.ravel(order="C").astype(np.int8)
    if flat.size:
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate([[0], change, [flat.size]])
        runs = np.diff(bounds)
        first = int(flat[0])
    else:
        runs, first = np.array([], dtype=int), 0
    c = grid.cell
    lines = [
        header,
        f"target {grid.target[0]!r} {grid.target[1]!r}",
        f"cell {c!r}",
        "origin {!r} {!r} {!r}".format(*(i * c for i in grid.index_origin)),
        "dims {} {} {}".format(*grid.dims),
        "rle {} {}".format(first, " ".join(str(int(r)) for r in runs)).rstrip(),
    ]
    return "\n".join(lines) + "\n"


def vv_from_text(text: str) -> VisibilityVolumeGrid:
    fields: dict[str, list[str]] = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, *rest = line.split()
        fields[key] = rest
    try:
        target = (float(fields["target"][0]), float(fields["target"][1]))
        cell = float(fields["cell"][0])
        index_origin = tuple(int(round(float(v) / cell)) for v in fields["origin"])
        dims = tuple(int(v) for v in fields["dims"])
        first, *runs = (int(v) for v in fields["rle"])
    except (KeyError, IndexError, ValueError) as exc:
        raise ValueError(f"malformed visibility grid text: {exc}") from exc
    values = np.zeros(sum(runs), dtype=bool)
    pos, val = 0, bool(first)
    for r in runs:
        values[pos : pos + r] = val
        pos += r
        val = not val
    if values.size != int(np.prod(dims)):
        raise ValueError("run lengths do not match grid dimensions")
    return VisibilityVolumeGrid(target, cell, index_origin, values.reshape(dims))


# -- adaptive placement along the POI path -----------------------------------


@dataclass
class DiscretizationResult:
    """Sample points along the POI path and the XOR metric between neighbours.

    ``metrics[k]`` and ``floor_hit[k]`` describe the interval from point ``k``
    to point ``k + 1``.
    """

    s: np.ndarray
    points: np.ndarray
    times: np.ndarray
    metrics: np.ndarray
    floor_hit: np.ndarray
    n_grids: int = 0

    def to_csv(self, header: Optional[str] = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(header.rstrip("\n") + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s_along_path", "t", "x", "y", "metric_to_next"])
        for k in range(len(self.s)):
            m = repr(float(self.metrics[k])) if k < len(self.metrics) else ""
            w.writerow([repr(float(self.s[k])), repr(float(self.times[k])), repr(float(self.points[k, 0])), repr(float(self.points[k, 1])), m])
        return buf.getvalue()


def initial_samples(traj: PoiTrajectory, spacing: float) -> np.ndarray:
    """Arc-length positions splitting every segment evenly at no more than ``spacing``."""
    arc = traj.arc_lengths
    out = [0.0]
    for k, L in enumerate(traj.segment_lengths):
        n = max(1, math.ceil(L / spacing - 1e-9))
        out.extend(arc[k] + L * np.arange(1, n + 1) / n)
    return np.asarray(out)


def adaptive_discretize(
    env: Environment,
    traj: PoiTrajectory,
    d_cutoff: float,
    initial_spacing: float,
    min_spacing: float,
    cell: float = DEFAULT_CELL,
    d_max: float = 100.0,
) -> DiscretizationResult:
    """Place visibility volumes along ``traj``, halving intervals whose XOR metric exceeds ``d_cutoff``."""
    if not 0 < min_spacing < initial_spacing:
        raise ValueError("need 0 < min_spacing < initial_spacing")
    if not d_cutoff > 0:
        raise ValueError("d_cutoff must be positive")
    cache: dict[float, VisibilityVolumeGrid] = {}

    def grid_at(s: float) -> VisibilityVolumeGrid:
        if s not in cache:
            p, _ = traj.point_at_arc(s)
            cache[s] = build_vv_grid(env, p, d_max, cell)
        return cache[s]

    s_out: list[float] = []
    metrics: list[float] = []
    floors: list[bool] = []

    def refine(sa: float, sb: float):
        m = vv_xor_volume(grid_at(sa), grid_at(sb))
        if m > d_cutoff and sb - sa > min_spacing:
            mid = 0.5 * (sa + sb)
            refine(sa, mid)
            refine(mid, sb)
            return
        s_out.append(sa)
        metrics.append(m)
        floors.append(m > d_cutoff)

    base = initial_samples(traj, initial_spacing)
    for sa, sb in zip(base[:-1], base[1:]):
        refine(float(sa), float(sb))
    s_out.append(float(base[-1]))
    s_arr = np.asarray(s_out)
    pts = np.array([traj.point_at_arc(s)[0] for s in s_arr])
    times = traj.t0 + s_arr / traj.v_g
    return DiscretizationResult(s_arr, pts, times, np.asarray(metrics), np.asarray(floors, dtype=bool), len(cache))
