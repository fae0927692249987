"""
World model: extruded-polygon obstacles, the road graph, and the POI's
piecewise constant-velocity trajectory.

Coordinates are meters in a local east/north tangent plane; the ground is
the plane z = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

EPS = 1e-9

Vec2 = tuple[float, float]


def _as_points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array of points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon given by its ordered vertices (counter-clockwise when valid).

    Orientation and simplicity are not enforced here so that
    :func:`validate_environment` can report them.
    """

    vertices: np.ndarray

    def __post_init__(self):
        verts = _as_points(self.vertices)
        if len(verts) < 3:
            raise ValueError("a polygon needs at least 3 vertices")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)

    @property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Edge start and end points, each shaped (n, 2)."""
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    @property
    def signed_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def centroid(self) -> Vec2:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = 0.5 * cross.sum()
        return (float(((x + xn) * cross).sum() / (6 * a)), float(((y + yn) * cross).sum() / (6 * a)))

    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def is_simple(self) -> bool:
        n = len(self.vertices)
        a, b = self.edges
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    # adjacent edges share exactly one vertex; check for overlap only
                    if _collinear_overlap(a[i], b[i], a[j], b[j]):
                        return False
                    continue
                if _segments_intersect(a[i], b[i], a[j], b[j]):
                    return False
        return True

    def rotated(self, k: int) -> "Polygon":
        """Same polygon with the vertex list cyclically shifted by ``k``."""
        return Polygon(np.roll(self.vertices, -k, axis=0))

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "Polygon":
        return cls([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


@dataclass(frozen=True)
class Obstacle:
    base: Polygon
    height: float


@dataclass(frozen=True)
class Environment:
    obstacles: tuple[Obstacle, ...]
    h_feasible: float

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def h_building(self) -> float:
        """Height of the tallest obstacle (0 for an empty world)."""
        return max((o.height for o in self.obstacles), default=0.0)


@dataclass(frozen=True)
class RoadGraph:
    nodes: np.ndarray
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        nodes = _as_points(self.nodes) if len(self.nodes) else np.zeros((0, 2))
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))

    def adjacent(self, i: int, j: int) -> bool:
        return (i, j) in self._edge_set or (j, i) in self._edge_set

    @property
    def _edge_set(self) -> frozenset:
        return frozenset(self.edges)


@dataclass(frozen=True, eq=False)
class PoiTrajectory:
    """Ground target moving at constant speed through ordered waypoints.

    Attributes
    ----------
    waypoints : (m, 2) array
        Road-node positions visited in order.
    v_g : float
        Target speed (m/s).
    t0 : float
        Time at the first waypoint (s).
    times : (m,) array
        Derived arrival time at every waypoint.
    """

    waypoints: np.ndarray
    v_g: float
    t0: float = 0.0
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        wp = _as_points(self.waypoints)
        if len(wp) < 2:
            raise ValueError("a trajectory needs at least two waypoints")
        if not self.v_g > 0:
            raise ValueError("v_g must be positive")
        seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
        if np.any(seg <= EPS):
            raise ValueError("consecutive waypoints must be distinct")
        times = self.t0 + np.concatenate([[0.0], np.cumsum(seg)]) / self.v_g
        wp.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "times", times)

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)

    @property
    def arc_lengths(self) -> np.ndarray:
        """Cumulative path length at each waypoint."""
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)])

    def segment_index(self, t: float) -> int:
        """Active segment at time ``t``; waypoint times belong to the incoming segment."""
        i = int(np.searchsorted(self.times, t, side="left")) - 1
        return min(max(i, 0), len(self.waypoints) - 2)

    def point_at_arc(self, s: float) -> tuple[np.ndarray, float]:
        """Position and time at path length ``s`` from the first waypoint."""
        arc = self.arc_lengths
        i = min(max(int(np.searchsorted(arc, s, side="right")) - 1, 0), len(arc) - 2)
        frac = (s - arc[i]) / (arc[i + 1] - arc[i])
        p = self.waypoints[i] + frac * (self.waypoints[i + 1] - self.waypoints[i])
        return p, self.t0 + s / self.v_g


# -- planar predicates -------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, a, b, eps: float = EPS) -> bool:
    ab = np.subtract(b, a)
    ap = np.subtract(p, a)
    L = math.hypot(ab[0], ab[1])
    if L <= eps:
        return math.hypot(ap[0], ap[1]) <= eps
    if abs(ab[0] * ap[1] - ab[1] * ap[0]) / L > eps:
        return False
    s = (ap[0] * ab[0] + ap[1] * ab[1]) / (L * L)
    return -eps / L <= s <= 1 + eps / L


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and (
        (d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS)
    ):
        return True
    return (
        _on_segment(p1, q1, q2)
        or _on_segment(p2, q1, q2)
        or _on_segment(q1, p1, p2)
        or _on_segment(q2, p1, p2)
    )


def _collinear_overlap(p1, p2, q1, q2) -> bool:
    """True when two segments are collinear and share more than a single point."""
    if abs(_cross(p1, p2, q1)) > EPS or abs(_cross(p1, p2, q2)) > EPS:
        return False
    d = np.subtract(p2, p1)
    L2 = float(d @ d)
    t = sorted([float(np.subtract(q1, p1) @ d) / L2, float(np.subtract(q2, p1) @ d) / L2])
    overlap = min(1.0, t[1]) - max(0.0, t[0])
    return overlap * math.sqrt(L2) > EPS


def point_in_polygon(poly: Polygon, p) -> bool:
    """Crossing-number membership test; points on the boundary count as inside."""
    x, y = float(p[0]), float(p[1])
    a, b = poly.edges
    for i in range(len(a)):
        if _on_segment((x, y), a[i], b[i]):
            return True
    inside = False
    for (x1, y1), (x2, y2) in zip(a, b):
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def segment_polygon_entry(p0, p1, poly: Polygon) -> Optional[float]:
    """Smallest ``s`` in [0, 1] with ``p0 + s (p1 - p0)`` in the closed polygon.

    Returns None when the segment misses the polygon entirely.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    L = math.hypot(d[0], d[1])
    if L <= EPS:
        raise ValueError("degenerate segment: p0 == p1")
    if point_in_polygon(poly, p0):
        return 0.0
    best = math.inf
    a, b = poly.edges
    for ea, eb in zip(a, b):
        e = eb - ea
        denom = d[0] * e[1] - d[1] * e[0]
        w = ea - p0
        if abs(denom) <= EPS * L * max(math.hypot(e[0], e[1]), EPS):
            # parallel: only a collinear overlap can touch
            if abs(d[0] * w[1] - d[1] * w[0]) / L > EPS:
                continue
            for q in (ea, eb):
                s = float((q - p0) @ d) / (L * L)
                if -EPS / L <= s <= 1 + EPS / L:
                    best = min(best, max(s, 0.0))
            continue
        s = (w[0] * e[1] - w[1] * e[0]) / denom
        u = (w[0] * d[1] - w[1] * d[0]) / denom
        tol_s = EPS / L
        tol_u = EPS / max(math.hypot(e[0], e[1]), EPS)
        if -tol_s <= s <= 1 + tol_s and -tol_u <= u <= 1 + tol_u:
            best = min(best, min(max(s, 0.0), 1.0))
    return None if best == math.inf else best


def first_entry_many(origin, targets: np.ndarray, poly: Polygon) -> np.ndarray:
    """Vectorized :func:`segment_polygon_entry` for segments ``origin -> targets[k]``.

    Returns an array of entry parameters with ``inf`` where the segment misses.
    Parallel edges are skipped: a segment entering along a collinear edge also
    crosses the adjacent edge at the shared vertex.
    """
    origin = np.asarray(origin, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    if point_in_polygon(poly, origin):
        return np.zeros(len(targets))
    d = targets - origin  # (N, 2)
    a, b = poly.edges
    e = b - a  # (E, 2)
    w = a - origin  # (E, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    L = np.hypot(d[:, 0], d[:, 1])[:, None]
    el = np.hypot(e[:, 0], e[:, 1])[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]) / denom
        u = (w[None, :, 0] * d[:, None, 1] - w[None, :, 1] * d[:, None, 0]) / denom
        ok = (
            (np.abs(denom) > EPS * L * el)
            & (s >= -EPS / L)
            & (s <= 1 + EPS / L)
            & (u >= -EPS / el)
            & (u <= 1 + EPS / el)
        )
    s = np.where(ok, np.clip(s, 0.0, 1.0), np.inf)
    return s.min(axis=1)


def first_entry_paired(origins: np.ndarray, targets: np.ndarray, poly: Polygon) -> np.ndarray:
    """Like :func:`first_entry_many` but each segment has its own origin."""
    origins = np.asarray(origins, dtype=float).reshape(-1, 2)
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    d = targets - origins
    a, b = poly.edges
    e = b - a
    w = a[None, :, :] - origins[:, None, :]  # (N, E, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    L = np.hypot(d[:, 0], d[:, 1])[:, None]
    el = np.hypot(e[:, 0], e[:, 1])[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (w[..., 0] * e[None, :, 1] - w[..., 1] * e[None, :, 0]) / denom
        u = (w[..., 0] * d[:, None, 1] - w[..., 1] * d[:, None, 0]) / denom
        ok = (
            (np.abs(denom) > EPS * L * el)
            & (s >= -EPS / L)
            & (s <= 1 + EPS / L)
            & (u >= -EPS / el)
            & (u <= 1 + EPS / el)
        )
    s = np.where(ok, np.clip(s, 0.0, 1.0), np.inf).min(axis=1)
    inside = _points_in_polygon(poly, origins)
    return np.where(inside, 0.0, s)


def _points_in_polygon(poly: Polygon, pts: np.ndarray) -> np.ndarray:
    """Vectorized closed-polygon membership (boundary counts as inside)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0:1], pts[:, 1:2]
    a, b = poly.edges
    x1, y1, x2, y2 = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        crosses = (y1 > y) != (y2 > y)
        xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside = (np.count_nonzero(crosses & (xc > x), axis=1) % 2) == 1
    ex, ey = x2 - x1, y2 - y1
    el2 = ex * ex + ey * ey
    t = np.clip(((x - x1) * ex + (y - y1) * ey) / el2, 0.0, 1.0)
    dist = np.hypot(x1 + t * ex - x, y1 + t * ey - y)
    on_edge = np.any(dist <= EPS, axis=1)
    return inside | on_edge


# -- validation --------------------------------------------------------------


def _interiors_overlap(p: Polygon, q: Polygon) -> bool:
    pb, qb = p.bounds(), q.bounds()
    if pb[2] <= qb[0] + EPS or qb[2] <= pb[0] + EPS or pb[3] <= qb[1] + EPS or qb[3] <= pb[1] + EPS:
        return False
    pa, pbv = p.edges
    qa, qbv = q.edges
    for i in range(len(pa)):
        for j in range(len(qa)):
            # proper crossing of edges implies interior overlap
            d1 = _cross(qa[j], qbv[j], pa[i])
            d2 = _cross(qa[j], qbv[j], pbv[i])
            d3 = _cross(pa[i], pbv[i], qa[j])
            d4 = _cross(pa[i], pbv[i], qbv[j])
            if d1 * d2 < -EPS * EPS and d3 * d4 < -EPS * EPS:
                return True
    # containment, or identical/shared-boundary shapes: test interior sample points
    for src, dst in ((p, q), (q, p)):
        for pt in _interior_samples(src):
            if point_in_polygon(dst, pt) and not _on_boundary(dst, pt):
                return True
    return False


def _on_boundary(poly: Polygon, pt) -> bool:
    a, b = poly.edges
    return any(_on_segment(pt, a[i], b[i]) for i in range(len(a)))


def _interior_samples(poly: Polygon) -> list:
    """A few points strictly inside ``poly``: centroid plus edge midpoints nudged inward."""
    pts = []
    c = poly.centroid
    if point_in_polygon(poly, c) and not _on_boundary(poly, c):
        pts.append(c)
    a, b = poly.edges
    sign = 1.0 if poly.signed_area > 0 else -1.0
    for ea, eb in zip(a, b):
        e = eb - ea
        L = math.hypot(e[0], e[1])
        if L <= EPS:
            continue
        nrm = sign * np.array([-e[1], e[0]]) / L
        m = 0.5 * (ea + eb) + nrm * min(1e-3, 1e-3 * L)
        if point_in_polygon(poly, m) and not _on_boundary(poly, m):
            pts.append(tuple(m))
    return pts


def validate_environment(env: Environment, graph: Optional[RoadGraph] = None) -> list[str]:
    """Return a list of human-readable invariant violations; empty when valid."""
    report: list[str] = []
    for i, ob in enumerate(env.obstacles):
        if ob.height <= 0:
            report.append(f"obstacle {i}: height must be positive (got {ob.height})")
        if ob.base.signed_area <= 0:
            report.append(f"obstacle {i}: base polygon is not counter-clockwise (signed area {ob.base.signed_area:.6g})")
        if not ob.base.is_simple():
            report.append(f"obstacle {i}: base polygon is not simple")
    for i in range(len(env.obstacles)):
        for j in range(i + 1, len(env.obstacles)):
            if _interiors_overlap(env.obstacles[i].base, env.obstacles[j].base):
                report.append(f"obstacles {i} and {j}: base interiors overlap")
    if env.h_feasible <= env.h_building:
        report.append(
            f"h_feasible ({env.h_feasible}) must exceed the tallest obstacle height ({env.h_building})"
        )
    if graph is not None:
        nodes = graph.nodes
        for i in range(len(nodes)):
            for j in range(i + 1, len(nodes)):
                if np.hypot(*(nodes[i] - nodes[j])) <= EPS:
                    report.append(f"nodes {i} and {j}: duplicate position")
        for i, j in graph.edges:
            if not (0 <= i < len(nodes) and 0 <= j < len(nodes)):
                report.append(f"edge ({i}, {j}): node index out of range")
                continue
            if i == j:
                report.append(f"edge ({i}, {j}): self loop")
                continue
            for k, ob in enumerate(env.obstacles):
                if segment_polygon_entry(nodes[i], nodes[j], ob.base) is not None:
                    report.append(f"edge ({i}, {j}): intersects obstacle {k}")
    return report


# -- POI motion --------------------------------------------------------------


def poi_state(traj: PoiTrajectory, t: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Position, velocity and heading of the POI at time ``t``.

    At an interior waypoint time the incoming segment's velocity is reported.
    """
    if t < traj.times[0] - EPS or t > traj.times[-1] + EPS:
        raise ValueError(f"t={t} outside trajectory span [{traj.times[0]}, {traj.times[-1]}]")
    i = traj.segment_index(t)
    p_i, p_j = traj.waypoints[i], traj.waypoints[i + 1]
    d = p_j - p_i
    u = d / np.hypot(d[0], d[1])
    g_dot = u * traj.v_g
    g = p_i + g_dot * (t - traj.times[i])
    return g, g_dot, math.atan2(g_dot[1], g_dot[0])


def trajectory_from_graph(graph: RoadGraph, node_sequence: Sequence[int], v_g: float, t0: float = 0.0) -> PoiTrajectory:
    seq = [int(k) for k in node_sequence]
    if len(seq) < 2:
        raise ValueError("node sequence needs at least two nodes")
    for k in seq:
        if not 0 <= k < len(graph.nodes):
            raise ValueError(f"node index {k} out of range")
    for a, b in zip(seq, seq[1:]):
        if a == b:
            raise ValueError(f"repeated node {a}: a transition must move to a different node")
        if not graph.adjacent(a, b):
            raise ValueError(f"nodes {a} and {b} are not connected by an edge")
    return PoiTrajectory(graph.nodes[seq], v_g, t0)


# -- file formats ------------------------------------------------------------


def environment_from_dict(data: dict) -> Environment:
    obstacles = tuple(Obstacle(Polygon(o["base"]), float(o["height"])) for o in data.get("obstacles", []))
    return Environment(obstacles, float(data["h_feasible"]))


def environment_to_dict(env: Environment) -> dict:
    return {
        "obstacles": [{"base": ob.base.vertices.tolist(), "height": ob.height} for ob in env.obstacles],
        "h_feasible": env.h_feasible,
    }


def graph_from_dict(data: dict) -> RoadGraph:
    return RoadGraph(np.asarray(data["nodes"], dtype=float).reshape(-1, 2), tuple(tuple(e) for e in data["edges"]))


def graph_to_dict(graph: RoadGraph) -> dict:
    return {"nodes": graph.nodes.tolist(), "edges": [list(e) for e in graph.edges]}


def load_environment(path) -> Environment:
    return environment_from_dict(json.loads(Path(path).read_text()))


def load_graph(path) -> RoadGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))
