"""Radius and statistical outlier removal for back-projected instance clouds.

Neighbor queries go through a uniform hash grid. Distances are evaluated with
the same elementwise expression as :func:`pairwise_distances`, so the grid
filters retain exactly the same points as an all-pairs scan.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import PointCloud


@dataclass(frozen=True)
class CleanConfig:
    radius: float = 0.1
    min_neighbors: int = 8
    knn_k: int = 20
    std_ratio: float = 2.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"radius must be positive, got {self.radius}")
        if int(self.min_neighbors) != self.min_neighbors or self.min_neighbors < 1:
            raise ValidationError(f"min_neighbors must be an integer >= 1, got {self.min_neighbors}")
        if int(self.knn_k) != self.knn_k or self.knn_k < 1:
            raise ValidationError(f"knn_k must be an integer >= 1, got {self.knn_k}")
        if not self.std_ratio > 0:
            raise ValidationError(f"std_ratio must be positive, got {self.std_ratio}")


def pairwise_distances(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    dx = P[:, None, 0] - Q[None, :, 0]
    dy = P[:, None, 1] - Q[None, :, 1]
    dz = P[:, None, 2] - Q[None, :, 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


class _Grid:
    def __init__(self, points: np.ndarray, cell: float):
        self.points = points
        self.cell = cell
        keys = np.floor(points / cell).astype(np.int64)
        self.keys = keys
        self.lo = keys.min(axis=0)
        self.hi = keys.max(axis=0)
        buckets = defaultdict(list)
        for idx, key in enumerate(map(tuple, keys)):
            buckets[key].append(idx)
        self.buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}

    def ring(self, key, r: int) -> np.ndarray:
        """Indices of points in cells within Chebyshev distance ``r`` of ``key``."""
        lo = np.maximum(np.array(key) - r, self.lo)
        hi = np.minimum(np.array(key) + r, self.hi)
        parts = []
        if np.prod(hi - lo + 1) > len(self.buckets):
            for k, idx in self.buckets.items():
                if all(lo[a] <= k[a] <= hi[a] for a in range(3)):
                    parts.append(idx)
        else:
            for i in range(lo[0], hi[0] + 1):
                for j in range(lo[1], hi[1] + 1):
                    for k in range(lo[2], hi[2] + 1):
                        idx = self.buckets.get((i, j, k))
                        if idx is not None:
                            parts.append(idx)
        return np.sort(np.concatenate(parts))

    def covers_all(self, key, r: int) -> bool:
        k = np.array(key)
        return bool(np.all(k - r <= self.lo) and np.all(k + r >= self.hi))


def radius_outlier_mask(points, radius: float, min_neighbors: int) -> np.ndarray:
    """True for points with at least ``min_neighbors`` other points within ``radius``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return keep
    # slight inflation keeps every in-radius neighbor within the 27-cell ring under rounding
    grid = _Grid(pts, radius * (1 + 1e-9))
    for key, members in grid.buckets.items():
        cand = grid.ring(key, 1)
        d = pairwise_distances(pts[members], pts[cand])
        counts = np.count_nonzero(d <= radius, axis=1) - 1
        keep[members] = counts >= min_neighbors
    return keep


def knn_mean_distances(points, k: int) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest other points (requires n > k)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n <= k:
        raise ValidationError(f"need more than k={k} points, got {n}")
    ext = np.sort(np.ptp(pts, axis=0))[::-1]
    area = max(ext[0] * ext[1], ext[0] ** 2 * 1e-6, 1e-12)
    cell = float(np.sqrt(area * k / n))
    grid = _Grid(pts, cell)
    nearest = np.empty((n, k))
    for key, members in grid.buckets.items():
        todo = members
        r = 1
        while len(todo):
            cand = grid.ring(key, r)
            if len(cand) > k:
                d = pairwise_distances(pts[todo], pts[cand])
                d[todo[:, None] == cand[None, :]] = np.inf
                kth = np.sort(np.partition(d, k - 1, axis=1)[:, :k], axis=1)
                # anything outside the examined ring is at least r cells away
                done = (kth[:, -1] <= r * cell * (1 - 1e-9)) | grid.covers_all(key, r)
                nearest[todo[done]] = kth[done]
                todo = todo[~done]
            r += 1
    return nearest.mean(axis=1)


def statistical_outlier_mask(points, knn_k: int, std_ratio: float) -> np.ndarray:
    """True for points whose mean kNN distance is at most mean + std_ratio * std."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) <= knn_k:
        return np.ones(len(pts), dtype=bool)
    mean_d = knn_mean_distances(pts, knn_k)
    mu = mean_d.mean()
    sigma = mean_d.std()
    return mean_d <= mu + std_ratio * sigma


def radius_outlier_filter(pc: PointCloud, radius: float, min_neighbors: int) -> PointCloud:
    CleanConfig(radius=radius, min_neighbors=min_neighbors)
    return pc.subset(radius_outlier_mask(pc.points, radius, min_neighbors))


def statistical_outlier_filter(pc: PointCloud, knn_k: int, std_ratio: float) -> PointCloud:
    CleanConfig(knn_k=knn_k, std_ratio=std_ratio)
    return pc.subset(statistical_outlier_mask(pc.points, knn_k, std_ratio))


def clean_mask(points, cfg: CleanConfig) -> np.ndarray:
    """Both filters evaluated on the same input; a point survives only if both keep it."""
    keep = radius_outlier_mask(points, cfg.radius, cfg.min_neighbors)
    keep &= statistical_outlier_mask(points, cfg.knn_k, cfg.std_ratio)
    return keep


def clean(pc: PointCloud, cfg: CleanConfig = CleanConfig()) -> PointCloud:
    return pc.subset(clean_mask(pc.points, cfg))
