"""Analytic ray-cast scenes of gravity-aligned boxes, for end-to-end checks and demos."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import box_record, dump_record, write_raster
from .geometry import CameraIntrinsics, OrientedBox3D, axis_rotation, box_corners


@dataclass
class SyntheticScene:
    image_id: str
    K: CameraIntrinsics
    width: int
    height: int
    boxes: list
    class_ids: list
    depth: np.ndarray
    ids: np.ndarray


def ray_box_depth(box: OrientedBox3D, K: CameraIntrinsics, width: int, height: int) -> np.ndarray:
    """Depth of the first hit of every pixel-center ray with ``box`` (0 where it misses).

    Rays are ``t * ((u - px)/fx, (v - py)/fy, 1)`` so the hit parameter ``t``
    is the depth directly.
    """
    u, v = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    d = np.stack([(u - K.px) / K.fx, (v - K.py) / K.fy, np.ones_like(u)], axis=-1)
    d_local = d @ box.rotation
    o_local = -box.center @ box.rotation
    half = box.dims / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o_local) / d_local
        t2 = (half - o_local) / d_local
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    parallel = d_local == 0
    inside = np.abs(o_local) <= half
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    near = tmin.max(axis=-1)
    far = tmax.min(axis=-1)
    hit = (near <= far) & (near > 0)
    return np.where(hit, near, 0.0)


def render(boxes, K: CameraIntrinsics, width: int, height: int):
    """Z-buffered depth and instance-id rasters; instance ``i + 1`` is ``boxes[i]``."""
    depth = np.zeros((height, width))
    ids = np.zeros((height, width), dtype=np.int64)
    for i, box in enumerate(boxes):
        d = ray_box_depth(box, K, width, height)
        closer = (d > 0) & ((depth == 0) | (d < depth))
        depth[closer] = d[closer]
        ids[closer] = i + 1
    return depth, ids


def _footprint(box, K):
    uv = K.project(box_corners(box))
    return uv.min(axis=0), uv.max(axis=0)


def random_scene(
    rng: np.random.Generator,
    image_id: str,
    n_boxes: int,
    n_classes: int = 3,
    width: int = 400,
    height: int = 320,
    camera_height: float = 4.5,
    depth_range=(2.4, 3.4),
    size_range=(0.45, 0.9),
    focal: float = 200.0,
    max_tries: int = 2000,
) -> SyntheticScene:
    """Level camera looking along +z from high above the floor; boxes stand on the
    floor with a random yaw about y.

    The principal point sits near the top edge so the floor region fills the
    frame. The defaults look down on the boxes at roughly 55 degrees: the top
    faces are sampled densely, so the statistical filter does not strip their
    far edges.

    Boxes are placed so their projected 2D extents are disjoint and fully inside
    the image, which rules out occlusion and truncation.
    """
    K = CameraIntrinsics(fx=focal, fy=focal, px=width / 2, py=8.0)
    margin = 4.0
    boxes, rects = [], []
    for _ in range(max_tries):
        if len(boxes) == n_boxes:
            break
        w, l = rng.uniform(*size_range, size=2)
        h = rng.uniform(*size_range)
        z = rng.uniform(*depth_range)
        x = rng.uniform(-1.0, 1.0) * z * (width / 2 - margin) / K.fx
        yaw = rng.uniform(0, np.pi)
        box = OrientedBox3D([x, camera_height - h / 2, z], [w, h, l], axis_rotation(1, yaw))
        lo, hi = _footprint(box, K)
        if lo[0] < margin or lo[1] < margin or hi[0] > width - margin or hi[1] > height - margin:
            continue
        if any(not (hi[0] < r_lo[0] or r_hi[0] < lo[0] or hi[1] < r_lo[1] or r_hi[1] < lo[1])
               for r_lo, r_hi in rects):
            continue
        boxes.append(box)
        rects.append((lo, hi))
    if len(boxes) < n_boxes:
        raise RuntimeError(f"could not place {n_boxes} non-overlapping boxes")
    class_ids = [int(c) for c in rng.integers(1, n_classes + 1, size=n_boxes)]
    depth, ids = render(boxes, K, width, height)
    return SyntheticScene(image_id, K, width, height, boxes, class_ids, depth, ids)


def write_dataset(root, scenes, up_axis: str = "y", dataset: dict | None = None):
    """Write rasters, ``manifest.json`` and ``gt.jsonl`` for ``scenes`` under ``root``."""
    root = Path(root)
    (root / "rasters").mkdir(parents=True, exist_ok=True)
    images = []
    with open(root / "gt.jsonl", "w") as gt:
        for sc in scenes:
            depth_path = Path("rasters") / f"{sc.image_id}_depth.raw"
            mask_path = Path("rasters") / f"{sc.image_id}_mask.raw"
            write_raster(root / depth_path, sc.depth, "float32")
            write_raster(root / mask_path, sc.ids, "uint16")
            labels = {str(i + 1): c for i, c in enumerate(sc.class_ids)}
            images.append({
                "image_id": sc.image_id,
                "depth_path": str(depth_path),
                "mask_path": str(mask_path),
                "intrinsics": sc.K.to_dict(),
                "class_label_map": labels,
            })
            for i, (box, c) in enumerate(zip(sc.boxes, sc.class_ids)):
                gt.write(dump_record(box_record(sc.image_id, i + 1, c, box)) + "\n")
    manifest = {"dataset": {"up_axis": up_axis, **(dataset or {})}, "images": images}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root / "manifest.json"
