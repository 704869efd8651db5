"""Slow, obviously-correct reference implementations used by the tests."""

import numpy as np

from liftbox.geometry import OrientedBox3D


def all_pairs_distances(points):
    p = np.asarray(points, dtype=np.float64)
    dx = p[:, None, 0] - p[None, :, 0]
    dy = p[:, None, 1] - p[None, :, 1]
    dz = p[:, None, 2] - p[None, :, 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def brute_radius_keep(points, radius, min_neighbors):
    D = all_pairs_distances(points)
    counts = (D <= radius).sum(axis=1) - 1
    return np.flatnonzero(counts >= min_neighbors)


def brute_knn_means(points, k):
    D = all_pairs_distances(points)
    np.fill_diagonal(D, np.inf)
    return np.sort(D, axis=1)[:, :k].mean(axis=1)


def brute_statistical_keep(points, k, std_ratio):
    n = len(points)
    if n <= k:
        return np.arange(n)
    m = brute_knn_means(points, k)
    return np.flatnonzero(m <= m.mean() + std_ratio * m.std())


def yaw_sweep_min_volume(points, up=1, step_deg=0.1):
    """Smallest yaw-only box volume over a uniform grid of yaw angles in [0, 90) degrees."""
    pts = np.asarray(points, dtype=np.float64)
    i, j = (up + 1) % 3, (up + 2) % 3
    a, b = pts[:, i], pts[:, j]
    height = np.ptp(pts[:, up])
    angles = np.radians(np.arange(0.0, 90.0, step_deg))
    c, s = np.cos(angles)[:, None], np.sin(angles)[:, None]
    pa = a[None] * c + b[None] * s
    pb = -a[None] * s + b[None] * c
    areas = np.ptp(pa, axis=1) * np.ptp(pb, axis=1)
    return float(areas.min() * height)


def monte_carlo_iou(a: OrientedBox3D, b: OrientedBox3D, n: int, rng) -> float:
    """IoU from the fraction of uniform samples in ``a`` that also fall in ``b``."""
    inside = 0
    chunk = 250_000
    done = 0
    while done < n:
        m = min(chunk, n - done)
        local = (rng.random((m, 3), dtype=np.float32) - 0.5) * a.dims.astype(np.float32)
        world = local @ a.rotation.T.astype(np.float32) + a.center.astype(np.float32)
        in_b = np.abs((world - b.center.astype(np.float32)) @ b.rotation.astype(np.float32))
        inside += int(np.count_nonzero(np.all(in_b <= b.dims.astype(np.float32) / 2, axis=1)))
        done += m
    inter = a.volume * inside / n
    return inter / (a.volume + b.volume - inter)


def axis_aligned_iou(a: OrientedBox3D, b: OrientedBox3D) -> float:
    lo = np.maximum(a.center - a.dims / 2, b.center - b.dims / 2)
    hi = np.minimum(a.center + a.dims / 2, b.center + b.dims / 2)
    inter = float(np.prod(np.clip(hi - lo, 0, None)))
    return inter / (a.volume + b.volume - inter)


def all_point_ap(tp_flags, n_gt):
    """Area under the precision envelope, integrated exactly over every recall step."""
    tp_flags = list(tp_flags)
    if n_gt == 0:
        return 0.0
    points = []
    tp = 0
    for rank, flag in enumerate(tp_flags, 1):
        tp += bool(flag)
        points.append((tp / n_gt, tp / rank))
    area, prev_recall = 0.0, 0.0
    for idx, (recall, _) in enumerate(points):
        if recall > prev_recall:
            best = max(p for r, p in points[idx:])
            area += (recall - prev_recall) * best
            prev_recall = recall
    return area
