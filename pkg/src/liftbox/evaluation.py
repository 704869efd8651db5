"""Oriented 3D IoU, greedy detection matching, precision/recall and AP.

IoU is exact: one box is clipped against the six half-spaces of the other and
the remaining convex polyhedron's volume is summed over its faces. AP uses
101-point recall interpolation on the right-maximum precision envelope.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geometry import OrientedBox3D, box_corners

DEFAULT_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 11))
DEFAULT_PR_THRESHOLD = 0.25
VOLUME_EPS = 1e-12
# IoU values within this distance of a threshold count as meeting it
IOU_MATCH_TOL = 1e-9
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


# -- exact IoU ----------------------------------------------------------------

def _box_polyhedron(box: OrientedBox3D) -> list[np.ndarray]:
    corners = box_corners(box)
    faces = []
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        for side in (0, 1):
            cycle = []
            for ba, bb in ((0, 0), (0, 1), (1, 1), (1, 0)):
                bit = [0, 0, 0]
                bit[axis], bit[a], bit[b] = side, ba, bb
                cycle.append(4 * bit[0] + 2 * bit[1] + bit[2])
            face = corners[cycle]
            outward = box.rotation[:, axis] * (1 if side else -1)
            normal = np.cross(face[1] - face[0], face[2] - face[0])
            if normal @ outward < 0:
                face = face[::-1]
            faces.append(face)
    return faces


def _halfspaces(box: OrientedBox3D):
    """Outward normals ``n`` and offsets ``d`` with the box = {x : n.x <= d}."""
    out = []
    for axis in range(3):
        n = box.rotation[:, axis]
        c = n @ box.center
        h = box.dims[axis] / 2
        out.append((n, c + h))
        out.append((-n, -c + h))
    return out


def _dedupe(points: list, tol: float) -> np.ndarray:
    kept = []
    for p in points:
        if all(np.max(np.abs(p - q)) > tol for q in kept):
            kept.append(p)
    return np.array(kept)


def _clip(faces: list, n: np.ndarray, d: float, tol: float) -> list:
    dist = [f @ n - d for f in faces]
    allv = np.concatenate(dist)
    if allv.max() <= tol:
        return faces
    if allv.min() >= -tol:
        return []
    out_faces, cap = [], []
    for f, s in zip(faces, dist):
        poly = []
        m = len(f)
        for i in range(m):
            j = (i + 1) % m
            if s[i] <= tol:
                poly.append(f[i])
                if s[i] >= -tol:
                    cap.append(f[i])
            if (s[i] < -tol and s[j] > tol) or (s[i] > tol and s[j] < -tol):
                t = s[i] / (s[i] - s[j])
                x = f[i] + t * (f[j] - f[i])
                poly.append(x)
                cap.append(x)
        if len(poly) >= 3:
            out_faces.append(np.array(poly))
    if cap:
        pts = _dedupe(cap, tol)
        if len(pts) >= 3:
            e1 = np.cross(n, [1.0, 0.0, 0.0])
            if np.linalg.norm(e1) < 0.5:
                e1 = np.cross(n, [0.0, 1.0, 0.0])
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(n, e1)  # e1 x e2 = n, so increasing angle winds counter-clockwise about n
            rel = pts - pts.mean(axis=0)
            order = np.argsort(np.arctan2(rel @ e2, rel @ e1))
            out_faces.append(pts[order])
    return out_faces


def polyhedron_volume(faces: Sequence[np.ndarray]) -> float:
    """Volume of a closed polyhedron with outward-wound faces (divergence theorem)."""
    total = 0.0
    for f in faces:
        v0 = f[0]
        for k in range(1, len(f) - 1):
            total += v0 @ np.cross(f[k], f[k + 1])
    return total / 6.0


def intersection_volume(a: OrientedBox3D, b: OrientedBox3D) -> float:
    reach = (np.linalg.norm(a.dims) + np.linalg.norm(b.dims)) / 2
    if np.linalg.norm(a.center - b.center) > reach:
        return 0.0
    # translate so clipping arithmetic happens near the origin
    origin = (a.center + b.center) / 2
    a0 = OrientedBox3D(a.center - origin, a.dims, a.rotation)
    b0 = OrientedBox3D(b.center - origin, b.dims, b.rotation)
    tol = 1e-12 * (1.0 + float(np.max(np.abs(box_corners(a0)))) + float(np.max(np.abs(box_corners(b0)))))
    faces = _box_polyhedron(a0)
    for n, d in _halfspaces(b0):
        faces = _clip(faces, n, d, tol)
        if not faces:
            return 0.0
    vol = polyhedron_volume(faces)
    return vol if vol >= VOLUME_EPS else 0.0


def iou3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    inter = intersection_volume(a, b)
    if inter == 0.0:
        return 0.0
    inter = min(inter, a.volume, b.volume)
    return float(min(1.0, inter / (a.volume + b.volume - inter)))


# -- records and matching -----------------------------------------------------

@dataclass(frozen=True)
class DetectionRecord:
    image_id: object
    class_id: int
    box: OrientedBox3D
    score: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValidationError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class Match:
    det_index: int
    gt_index: int | None
    iou: float

    @property
    def is_tp(self) -> bool:
        return self.gt_index is not None


def _score_order(dets) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def _iou_matrix(dets, gts) -> np.ndarray:
    M = np.full((len(dets), len(gts)), -1.0)
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            if d.class_id == g.class_id:
                M[i, j] = iou3d(d.box, g.box)
    return M


def _greedy(dets, ious: np.ndarray, iou_thresh: float) -> list[Match]:
    matched = np.zeros(ious.shape[1], dtype=bool)
    out = []
    for i in _score_order(dets):
        row = np.where(matched, -1.0, ious[i])
        j = int(np.argmax(row)) if row.size else -1
        if j >= 0 and row[j] >= 0 and row[j] >= iou_thresh - IOU_MATCH_TOL:
            matched[j] = True
            out.append(Match(i, j, float(row[j])))
        else:
            out.append(Match(i, None, float(row[j]) if j >= 0 and row[j] > 0 else 0.0))
    return out


def match_detections(dets: Sequence[DetectionRecord], gts: Sequence[DetectionRecord], iou_thresh: float) -> list[Match]:
    """Greedy matching for one image, in descending score order.

    Each detection takes the unmatched same-class ground truth with the highest
    IoU (lowest index on ties) if that IoU reaches ``iou_thresh``.
    """
    if not 0 < iou_thresh <= 1:
        raise ValidationError(f"IoU threshold must lie in (0, 1], got {iou_thresh}")
    return _greedy(dets, _iou_matrix(dets, gts), iou_thresh)


def _image_key(image_id):
    return (0, image_id, "") if isinstance(image_id, (int, np.integer)) else (1, 0, str(image_id))


class _Scene:
    """Detections and ground truth grouped per image with cached IoU matrices."""

    def __init__(self, dets, gts):
        self.dets = list(dets)
        self.gts = list(gts)
        by_img = defaultdict(lambda: ([], []))
        for i, d in enumerate(self.dets):
            by_img[d.image_id][0].append(i)
        for j, g in enumerate(self.gts):
            by_img[g.image_id][1].append(j)
        self.images = []
        for img in sorted(by_img, key=_image_key):
            di, gi = by_img[img]
            ious = _iou_matrix([self.dets[i] for i in di], [self.gts[j] for j in gi])
            self.images.append((img, di, gi, ious))

    def tp_flags(self, iou_thresh: float) -> np.ndarray:
        flags = np.zeros(len(self.dets), dtype=bool)
        for _, di, _, ious in self.images:
            local = [self.dets[i] for i in di]
            for m in _greedy(local, ious, iou_thresh):
                flags[di[m.det_index]] = m.is_tp
        return flags

    def det_order(self) -> list[int]:
        """All detections, image order then within-image order, stably sorted by score."""
        flat = [i for _, di, _, _ in self.images for i in di]
        return sorted(flat, key=lambda i: -self.dets[i].score)

    def classes(self) -> list[int]:
        return sorted({g.class_id for g in self.gts} | {d.class_id for d in self.dets})


def _counts(scene: _Scene, iou_thresh: float, class_id=None):
    flags = scene.tp_flags(iou_thresh)
    sel = [i for i, d in enumerate(scene.dets) if class_id is None or d.class_id == class_id]
    tp = int(flags[sel].sum()) if sel else 0
    fp = len(sel) - tp
    n_gt = sum(1 for g in scene.gts if class_id is None or g.class_id == class_id)
    return tp, fp, n_gt - tp


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def precision_recall(dets, gts, iou_thresh: float = DEFAULT_PR_THRESHOLD):
    """Pooled precision and recall over all images and classes (0/0 reads as 0)."""
    if not 0 < iou_thresh <= 1:
        raise ValidationError(f"IoU threshold must lie in (0, 1], got {iou_thresh}")
    tp, fp, fn = _counts(_Scene(dets, gts), iou_thresh)
    return _ratio(tp, tp + fp), _ratio(tp, tp + fn)


def interpolated_ap(tp_flags: Sequence[bool], n_gt: int) -> float:
    """101-point interpolated AP for detections already sorted by descending score."""
    if n_gt == 0:
        raise ValidationError("AP is undefined without ground truth")
    tp = np.asarray(tp_flags, dtype=bool)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(q.mean())


def _ap_per_class(scene: _Scene, iou_thresh: float) -> dict[int, float]:
    flags = scene.tp_flags(iou_thresh)
    order = scene.det_order()
    gt_count = defaultdict(int)
    for g in scene.gts:
        gt_count[g.class_id] += 1
    out = {}
    for c in sorted(gt_count):
        ranked = [flags[i] for i in order if scene.dets[i].class_id == c]
        out[c] = interpolated_ap(ranked, gt_count[c])
    return out


def average_precision(dets, gts, iou_thresh: float) -> dict[int, float]:
    """Per-class AP at one IoU threshold; classes without ground truth are omitted."""
    if not 0 < iou_thresh <= 1:
        raise ValidationError(f"IoU threshold must lie in (0, 1], got {iou_thresh}")
    return _ap_per_class(_Scene(dets, gts), iou_thresh)


# -- report -------------------------------------------------------------------

@dataclass(frozen=True)
class ClassSplit:
    """Original vs new class ids for the split AP columns."""

    original: frozenset
    new: frozenset

    def __post_init__(self):
        original = frozenset(int(c) for c in self.original)
        new = frozenset(int(c) for c in self.new)
        if original & new:
            raise ValidationError(f"classes {sorted(original & new)} are both original and new")
        object.__setattr__(self, "original", original)
        object.__setattr__(self, "new", new)

    def __contains__(self, class_id) -> bool:
        return class_id in self.original or class_id in self.new


@dataclass
class EvalReport:
    thresholds: tuple
    per_class_ap: dict = field(default_factory=dict)  # class -> [AP at each threshold]
    ap_per_threshold: list = field(default_factory=list)
    ap3d: float | None = None
    ap3d_original: float | None = None
    ap3d_new: float | None = None
    pr_threshold: float = DEFAULT_PR_THRESHOLD
    precision: float = 0.0
    recall: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_class_pr: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        per_class = {}
        for c in sorted(set(self.per_class_ap) | set(self.per_class_pr)):
            entry = dict(self.per_class_pr.get(c, {}))
            if c in self.per_class_ap:
                aps = self.per_class_ap[c]
                entry["AP3D"] = float(np.mean(aps))
                entry["AP3D_per_threshold"] = list(aps)
            per_class[str(c)] = entry
        return {
            "AP3D": self.ap3d,
            "AP3D_original": self.ap3d_original,
            "AP3D_new": self.ap3d_new,
            "AP3D_per_threshold": dict(zip((f"{t:.2f}" for t in self.thresholds), self.ap_per_threshold)),
            "iou_thresholds": list(self.thresholds),
            "pr_iou_threshold": self.pr_threshold,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "per_class": per_class,
        }

    def format_table(self) -> str:
        def pct(x):
            return "   -  " if x is None else f"{100 * x:6.2f}"

        lines = [
            f"AP3D {pct(self.ap3d)}   original {pct(self.ap3d_original)}   new {pct(self.ap3d_new)}",
            f"precision {pct(self.precision)}   recall {pct(self.recall)}   "
            f"@IoU {self.pr_threshold:.2f}  (TP {self.tp}, FP {self.fp}, FN {self.fn})",
            "",
            f"{'class':>8} {'AP3D':>7} {'prec':>7} {'recall':>7}",
        ]
        for c in sorted(set(self.per_class_ap) | set(self.per_class_pr)):
            ap = float(np.mean(self.per_class_ap[c])) if c in self.per_class_ap else None
            pr = self.per_class_pr.get(c, {})
            lines.append(f"{c:>8} {pct(ap):>7} {pct(pr.get('precision')):>7} {pct(pr.get('recall')):>7}")
        return "\n".join(lines)


def _mean_over(per_class_ap: dict, classes, n_thr: int) -> float | None:
    sel = [per_class_ap[c] for c in classes if c in per_class_ap]
    if not sel:
        return None
    return float(np.mean(np.array(sel).reshape(len(sel), n_thr)))


def mean_ap_over_thresholds(
    dets,
    gts,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    split: ClassSplit | None = None,
    pr_threshold: float = DEFAULT_PR_THRESHOLD,
    with_ap: bool = True,
) -> EvalReport:
    """AP at every threshold, averaged over thresholds and classes, plus pooled P/R.

    ``with_ap=False`` skips AP (unscored pseudo boxes only get precision/recall).
    """
    thresholds = tuple(float(t) for t in thresholds)
    for t in thresholds + (pr_threshold,):
        if not 0 < t <= 1:
            raise ValidationError(f"IoU threshold must lie in (0, 1], got {t}")
    scene = _Scene(dets, gts)
    report = EvalReport(thresholds=thresholds, pr_threshold=pr_threshold)

    if with_ap:
        per_thr = [_ap_per_class(scene, t) for t in thresholds]
        classes = sorted(per_thr[0]) if per_thr else []
        report.per_class_ap = {c: [pt[c] for pt in per_thr] for c in classes}
        report.ap_per_threshold = [float(np.mean(list(pt.values()))) if pt else 0.0 for pt in per_thr]
        report.ap3d = _mean_over(report.per_class_ap, classes, len(thresholds)) if classes else 0.0
        if split is not None:
            report.ap3d_original = _mean_over(report.per_class_ap, sorted(split.original), len(thresholds))
            report.ap3d_new = _mean_over(report.per_class_ap, sorted(split.new), len(thresholds))

    report.tp, report.fp, report.fn = _counts(scene, pr_threshold)
    report.precision = _ratio(report.tp, report.tp + report.fp)
    report.recall = _ratio(report.tp, report.tp + report.fn)
    for c in scene.classes():
        tp, fp, fn = _counts(scene, pr_threshold, c)
        report.per_class_pr[c] = {
            "precision": _ratio(tp, tp + fp),
            "recall": _ratio(tp, tp + fn),
            "tp": tp,
            "fp": fp,
            "fn": fn,
        }
    return report
