"""Camera, raster and box types plus the pinhole / cuboid transforms.

Conventions
-----------
* Camera coordinates: x right, y down, z forward (meters).
* Pixel ``(col, row)`` is sampled at its center ``(col + 0.5, row + 0.5)``.
* Invalid depth is any value ``<= 0``.
* Box corners follow :data:`UNIT_CORNERS`: lexicographic order over the sign
  triples of the local ``(x, y, z)`` axes, ``(-,-,-), (-,-,+), (-,+,-), ...``.
  Corner ``i`` has local signs given by the bits of ``i`` (x is the high bit).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateRotationError,
    RasterMismatchError,
    UnknownInstanceError,
    ValidationError,
)

UNIT_CORNERS = np.array(list(itertools.product((-0.5, 0.5), repeat=3)), dtype=np.float64)
UNIT_CORNERS.setflags(write=False)

ROTATION_TOL = 1e-9


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.px, self.py)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError(f"intrinsics must be finite, got {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]])

    def project(self, points) -> np.ndarray:
        """Project camera-space points ``(n, 3)`` to continuous pixel coordinates ``(n, 2)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        u = self.fx * pts[:, 0] / pts[:, 2] + self.px
        v = self.fy * pts[:, 1] / pts[:, 2] + self.py
        return np.stack([u, v], axis=1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "px": self.px, "py": self.py}


@dataclass(frozen=True)
class DepthMap:
    """Metric depth raster; ``values`` has shape ``(height, width)``."""

    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values, np.float64)
        if vals.ndim != 2:
            raise ValidationError(f"depth raster must be 2D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("depth raster contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class InstanceMask:
    """Instance id raster (0 = background) and the instance -> class map."""

    ids: np.ndarray
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = _frozen(self.ids, np.int64)
        if ids.ndim != 2:
            raise ValidationError(f"mask raster must be 2D, got shape {ids.shape}")
        if np.any(ids < 0):
            raise ValidationError("instance ids must be non-negative")
        labels = {int(k): int(v) for k, v in dict(self.labels).items()}
        present = set(np.unique(ids).tolist()) - {0}
        missing = sorted(present - set(labels))
        if missing:
            raise ValidationError(f"instance ids {missing} have no class label")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    def instance_ids(self) -> list[int]:
        return sorted(set(np.unique(self.ids).tolist()) - {0})


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    instance_id: int = 0
    class_id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point coordinates must be finite")
        if np.any(pts[:, 2] <= 0):
            raise ValidationError("every point must lie in front of the camera (z > 0)")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, keep) -> "PointCloud":
        return PointCloud(self.points[np.asarray(keep)], self.instance_id, self.class_id)


def check_rotation(R, tol: float = ROTATION_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValidationError(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        raise ValidationError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValidationError("rotation determinant is not +1")
    return R


@dataclass(frozen=True)
class OrientedBox3D:
    """Box with local axes given by the columns of ``rotation``; ``dims`` = (w, h, l)."""

    center: np.ndarray
    dims: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(-1)
        dims = np.asarray(self.dims, dtype=np.float64).reshape(-1)
        if center.shape != (3,) or not np.all(np.isfinite(center)):
            raise ValidationError("box center must be a finite 3-vector")
        if dims.shape != (3,) or not np.all(np.isfinite(dims)) or np.any(dims <= 0):
            raise ValidationError(f"box dims must be three positive numbers, got {dims}")
        rot = check_rotation(self.rotation)
        object.__setattr__(self, "center", _frozen(center))
        object.__setattr__(self, "dims", _frozen(dims))
        object.__setattr__(self, "rotation", _frozen(rot))

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    def corners(self) -> np.ndarray:
        return box_corners(self)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        """Boolean mask of points inside the box inflated by ``tol`` along every axis."""
        local = (np.atleast_2d(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.dims / 2 + tol, axis=1)

    def transformed(self, R, t) -> "OrientedBox3D":
        R = np.asarray(R, dtype=np.float64)
        return OrientedBox3D(R @ self.center + np.asarray(t), self.dims, R @ self.rotation)


@dataclass(frozen=True)
class CuboidParams:
    """Detector head output: projected-center offsets, depth, sizes, 6D rotation, 2D box, log-scale."""

    u: float
    v: float
    z: float
    w: float
    h: float
    l: float
    p: tuple
    box2d: tuple
    s: float = 0.0

    def __post_init__(self):
        if not self.z > 0:
            raise ValidationError(f"center depth must be positive, got {self.z}")
        if not (self.w > 0 and self.h > 0 and self.l > 0):
            raise ValidationError("cuboid side lengths must be positive")
        p = tuple(float(x) for x in self.p)
        if len(p) != 6:
            raise ValidationError("rotation representation must have 6 components")
        box2d = tuple(float(x) for x in self.box2d)
        if len(box2d) != 4:
            raise ValidationError("box2d must be (x2D, y2D, w2D, h2D)")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "box2d", box2d)
        _gram_schmidt(np.array(p))

    # parameter vector layout shared with the loss gradients
    PARAM_NAMES = ("u", "v", "z", "w", "h", "l", "p0", "p1", "p2", "p3", "p4", "p5", "s")

    def as_vector(self) -> np.ndarray:
        return np.array([self.u, self.v, self.z, self.w, self.h, self.l, *self.p, self.s])

    @classmethod
    def from_vector(cls, theta, box2d) -> "CuboidParams":
        t = [float(x) for x in theta]
        return cls(t[0], t[1], t[2], t[3], t[4], t[5], tuple(t[6:12]), tuple(box2d), t[12])


def backproject_pixels(u, v, depth, K: CameraIntrinsics) -> np.ndarray:
    """Lift continuous pixel coordinates with depth to camera space: ``Z K^-1 (u, v, 1)``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    x = z * (u - K.px) / K.fx
    y = z * (v - K.py) / K.fy
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def backproject(depth: DepthMap, mask: InstanceMask, K: CameraIntrinsics, instance_id: int) -> PointCloud:
    """Point cloud of one instance, one point per masked pixel with valid depth.

    Points are emitted in row-major pixel order. A cloud with zero points is a
    legal result (the instance has no valid depth).
    """
    if depth.values.shape != mask.ids.shape:
        raise RasterMismatchError(
            f"depth raster {depth.values.shape} does not match mask raster {mask.ids.shape}"
        )
    instance_id = int(instance_id)
    if instance_id == 0 or instance_id not in mask.labels:
        raise UnknownInstanceError(f"instance {instance_id} does not occur in the mask")
    sel = (mask.ids == instance_id) & (depth.values > 0)
    rows, cols = np.nonzero(sel)
    pts = backproject_pixels(cols + 0.5, rows + 0.5, depth.values[rows, cols], K)
    return PointCloud(pts.reshape(-1, 3), instance_id, mask.labels[instance_id])


def _gram_schmidt(p: np.ndarray):
    b1, b2 = p[:3], p[3:]
    n1 = np.linalg.norm(b1)
    n2 = np.linalg.norm(b2)
    if not (np.isfinite(n1) and np.isfinite(n2)) or n1 == 0 or n2 == 0:
        raise DegenerateRotationError("6D rotation has a zero (or non-finite) half")
    a1 = b1 / n1
    c = b2 - (a1 @ b2) * a1
    nc = np.linalg.norm(c)
    if nc <= 1e-12 * n2:
        raise DegenerateRotationError("6D rotation halves are parallel")
    return a1, c, nc, n1


def rotation_from_6d(p) -> np.ndarray:
    """Gram-Schmidt a 6-vector into a rotation with columns ``(a1, a2, a1 x a2)``."""
    a1, c, nc, _ = _gram_schmidt(np.asarray(p, dtype=np.float64).reshape(6))
    a2 = c / nc
    return np.stack([a1, a2, np.cross(a1, a2)], axis=1)


def _skew(a):
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def rotation_from_6d_jacobian(p):
    """Rotation and its derivative ``dR[i, j, k] = d R_ij / d p_k``."""
    p = np.asarray(p, dtype=np.float64).reshape(6)
    a1, c, nc, n1 = _gram_schmidt(p)
    a2 = c / nc
    a3 = np.cross(a1, a2)
    b2 = p[3:]
    eye = np.eye(3)

    da1 = np.zeros((3, 6))
    da1[:, :3] = (eye - np.outer(a1, a1)) / n1
    dc = np.zeros((3, 6))
    dc[:, 3:] = eye - np.outer(a1, a1)
    dc -= ((a1 @ b2) * eye + np.outer(a1, b2)) @ da1
    da2 = (eye - np.outer(a2, a2)) / nc @ dc
    da3 = -_skew(a2) @ da1 + _skew(a1) @ da2

    R = np.stack([a1, a2, a3], axis=1)
    dR = np.stack([da1, da2, da3], axis=1)
    return R, dR


def center_from_projection(c: CuboidParams, K: CameraIntrinsics) -> np.ndarray:
    x2d, y2d, w2d, h2d = c.box2d
    return np.array([
        c.z / K.fx * (x2d + c.u * w2d - K.px),
        c.z / K.fy * (y2d + c.v * h2d - K.py),
        c.z,
    ])


def corners_from(center, dims, R) -> np.ndarray:
    """``R diag(dims) B_unit + center`` as an ``(8, 3)`` array (rows are corners)."""
    return (UNIT_CORNERS * np.asarray(dims)) @ np.asarray(R).T + np.asarray(center)


def box_corners(box: OrientedBox3D) -> np.ndarray:
    return corners_from(box.center, box.dims, box.rotation)


def axis_rotation(axis: int, angle: float) -> np.ndarray:
    """Right-handed rotation by ``angle`` about coordinate axis ``axis`` (0, 1, 2)."""
    i, j = (axis + 1) % 3, (axis + 2) % 3
    c, s = np.cos(angle), np.sin(angle)
    R = np.eye(3)
    R[i, i] = c
    R[j, i] = s
    R[i, j] = -s
    R[j, j] = c
    return R
