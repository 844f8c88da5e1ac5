"""Planar geometry primitives shared by the simulator, planner, and executor.

Everything here is deterministic and allocation-light: poses, convex polygons
(table tops), and the segment/disc queries the contact models are built from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    a = math.fmod(float(angle), TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)], dtype=np.float64)


@dataclass(frozen=True)
class Pose2:
    """A planar pose; yaw is always stored normalized to (-pi, pi]."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def moved(self, dx: float, dy: float, dyaw: float = 0.0) -> "Pose2":
        return Pose2(self.x + dx, self.y + dy, self.yaw + dyaw)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


def lerp_pose(a: Pose2, b: Pose2, t: float) -> Pose2:
    """Interpolate positions linearly and yaw along the shortest arc."""
    dyaw = wrap_angle(b.yaw - a.yaw)
    return Pose2(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, a.yaw + dyaw * t)


def segment_closest_point(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Closest point to p on the segment [a, b]."""
    ab = b - a
    denom = float(ab @ ab)
    if denom <= 0.0:
        return a.copy()
    t = float((p - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    return a + t * ab


def segment_point_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> float:
    q = segment_closest_point(a, b, p)
    return float(np.hypot(*(p - q)))


def segment_disc_hit(a: np.ndarray, b: np.ndarray, center: np.ndarray, radius: float) -> bool:
    return segment_point_distance(a, b, center) <= radius


@dataclass(frozen=True)
class ConvexPolygon:
    """A convex polygon with counter-clockwise vertices.

    Signed distances are measured against edge lines with outward normals:
    negative inside, positive outside. For convex polygons the maximum over
    edges is the signed distance to the boundary whenever the nearest feature
    is an edge, which is the case for every overhang/fall query we make.
    """

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        object.__setattr__(
            self, "vertices", tuple((float(x), float(y)) for x, y in self.vertices)
        )

    @property
    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=np.float64)

    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.vertex_array
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def edge_outward_normal(self, index: int) -> np.ndarray:
        a, b = self.edges()[index]
        d = b - a
        n = np.array([d[1], -d[0]], dtype=np.float64)
        norm = float(np.hypot(*n))
        if norm <= 0.0:
            raise ValueError("degenerate polygon edge")
        return n / norm

    def edge_angle(self, index: int) -> float:
        a, b = self.edges()[index]
        return wrap_angle(math.atan2(b[1] - a[1], b[0] - a[0]))

    def centroid(self) -> np.ndarray:
        return self.vertex_array.mean(axis=0)

    def edge_signed_distances(self, point: np.ndarray) -> np.ndarray:
        """Signed distance of point to every edge line (positive outside)."""
        p = np.asarray(point, dtype=np.float64)
        out = np.empty(len(self.vertices), dtype=np.float64)
        for i, (a, _) in enumerate(self.edges()):
            out[i] = float((p - a) @ self.edge_outward_normal(i))
        return out

    def signed_distance(self, point: np.ndarray) -> float:
        """Max edge-line signed distance: negative inside, positive outside."""
        return float(self.edge_signed_distances(point).max())

    def contains(self, point: np.ndarray, tol: float = 0.0) -> bool:
        return self.signed_distance(point) <= tol

    def nearest_edge(self, point: np.ndarray) -> int:
        """Index of the edge line the point is closest to crossing."""
        return int(self.edge_signed_distances(point).argmax())

    def bounds(self) -> tuple[float, float, float, float]:
        v = self.vertex_array
        return (
            float(v[:, 0].min()),
            float(v[:, 1].min()),
            float(v[:, 0].max()),
            float(v[:, 1].max()),
        )

    def rotated(self, angle: float, about: np.ndarray | None = None) -> "ConvexPolygon":
        pivot = self.centroid() if about is None else np.asarray(about, dtype=np.float64)
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        moved = (self.vertex_array - pivot) @ rot.T + pivot
        return ConvexPolygon(tuple((float(x), float(y)) for x, y in moved))

    def sample_point(self, rng: np.random.Generator, margin: float = 0.0) -> np.ndarray:
        """Uniform interior point by rejection inside the bounding box."""
        x0, y0, x1, y1 = self.bounds()
        for _ in range(10_000):
            p = np.array(
                [rng.uniform(x0, x1), rng.uniform(y0, y1)], dtype=np.float64
            )
            if self.signed_distance(p) <= -margin:
                return p
        raise RuntimeError("rejection sampling failed; margin too large for polygon")


def rectangle(x0: float, y0: float, x1: float, y1: float) -> ConvexPolygon:
    """Axis-aligned rectangle as a CCW convex polygon."""
    if x1 <= x0 or y1 <= y0:
        raise ValueError("rectangle needs x1 > x0 and y1 > y0")
    return ConvexPolygon(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))
