"""Gravity-aligned minimum-volume box fitting via convex hull + rotating calipers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCloudError, ValidationError
from .geometry import OrientedBox3D, PointCloud, axis_rotation

AXES = {"x": 0, "y": 1, "z": 2}
AREA_RTOL = 1e-12


@dataclass(frozen=True)
class Hull2D:
    """Convex hull vertices in counter-clockwise order (1 or 2 vertices when degenerate)."""

    vertices: np.ndarray

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def area(self) -> float:
        if len(self) < 3:
            return 0.0
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class Rect2D:
    angle: float
    extent_a: float
    extent_b: float
    center: np.ndarray

    @property
    def area(self) -> float:
        return self.extent_a * self.extent_b

    def corners(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        ax, bx = np.array([c, s]), np.array([-s, c])
        ha, hb = self.extent_a / 2, self.extent_b / 2
        return np.array([
            self.center - ha * ax - hb * bx,
            self.center + ha * ax - hb * bx,
            self.center + ha * ax + hb * bx,
            self.center - ha * ax + hb * bx,
        ])


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(points) -> Hull2D:
    """Andrew's monotone chain. Collinear points are dropped from the hull."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValidationError("convex hull of an empty point set")
    pts = np.unique(pts, axis=0)  # lexicographic sort + dedupe
    if len(pts) <= 2:
        return Hull2D(pts)
    seq = [tuple(p) for p in pts]

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(seq)
    upper = half(reversed(seq))
    hull = lower[:-1] + upper[:-1]
    return Hull2D(np.array(hull))


def _extents(pts: np.ndarray, angle: float):
    c, s = np.cos(angle), np.sin(angle)
    a = pts[:, 0] * c + pts[:, 1] * s
    b = -pts[:, 0] * s + pts[:, 1] * c
    return a.min(), a.max(), b.min(), b.max()


def _rect_at(pts: np.ndarray, angle: float) -> Rect2D:
    amin, amax, bmin, bmax = _extents(pts, angle)
    ca, cb = (amin + amax) / 2, (bmin + bmax) / 2
    c, s = np.cos(angle), np.sin(angle)
    center = np.array([ca * c - cb * s, ca * s + cb * c])
    return Rect2D(float(angle), float(amax - amin), float(bmax - bmin), center)


def min_area_rect_2d(hull: Hull2D) -> Rect2D:
    """Minimum-area enclosing rectangle; one side lies on a hull edge.

    ``angle`` is the direction of the ``extent_a`` side, normalized to
    ``[0, pi/2)``. Equal areas resolve to the smallest angle. A single point
    gives angle 0 and zero extents; two points give the segment direction
    (modulo pi/2, like every other angle).
    """
    pts = np.asarray(hull.vertices, dtype=np.float64)
    if len(pts) == 0:
        raise ValidationError("hull has no vertices")
    if len(pts) == 1:
        return Rect2D(0.0, 0.0, 0.0, pts[0].copy())
    edges = np.roll(pts, -1, axis=0) - pts
    if len(pts) == 2:
        edges = edges[:1]
    angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2)
    angles[angles >= np.pi / 2] = 0.0
    best = None
    for angle in np.sort(np.unique(angles)):
        rect = _rect_at(pts, angle)
        if best is None or rect.area < best.area * (1 - AREA_RTOL):
            best = rect
    return best


def _plane_axes(up: int):
    return (up + 1) % 3, (up + 2) % 3


def parse_up_axis(up_axis) -> int:
    if isinstance(up_axis, (int, np.integer)) and 0 <= up_axis <= 2:
        return int(up_axis)
    key = str(up_axis).lower()
    if key not in AXES:
        raise ValidationError(f"up_axis must be one of x, y, z, got {up_axis!r}")
    return AXES[key]


def min_oriented_box_yaw(pc: PointCloud, up_axis="y") -> OrientedBox3D:
    """Smallest box, rotated only about ``up_axis``, that encloses every point.

    With up axis ``k`` the ground plane uses coordinates ``(k+1, k+2) mod 3``,
    so the returned rotation is a right-handed turn about ``k`` by the caliper
    angle. ``dims[k]`` is the vertical extent, ``dims[(k+1)%3]`` the extent
    along the caliper direction and ``dims[(k+2)%3]`` the perpendicular one.
    """
    k = parse_up_axis(up_axis)
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateCloudError(f"need at least 3 points, got {len(pts)}")
    i, j = _plane_axes(k)
    plane = pts[:, [i, j]]
    hull = convex_hull_2d(plane)
    if len(hull) < 3:
        raise DegenerateCloudError("points are collinear in the ground plane")
    rect = min_area_rect_2d(hull)
    lo, hi = pts[:, k].min(), pts[:, k].max()
    dims = np.empty(3)
    dims[k], dims[i], dims[j] = hi - lo, rect.extent_a, rect.extent_b
    if np.any(dims <= 0):
        raise DegenerateCloudError(f"cloud has zero extent along an axis: dims={dims}")
    center = np.empty(3)
    center[k] = (lo + hi) / 2
    center[i], center[j] = rect.center
    return OrientedBox3D(center, dims, axis_rotation(k, rect.angle))
