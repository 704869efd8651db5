"""Dataset ingestion, configuration and the generate / evaluate flows.

Manifest (JSON or YAML)::

    dataset:
      up_axis: y                       # x, y or z
      classes: {1: chair, 2: table}    # class id -> name
      embedding_file: emb.json         # optional, used to build thresholds
      ref_counts_file: counts.yaml     # optional, class name -> mean point count
      thresholds_file: table.json      # optional, prebuilt threshold table
      partition_file: split.json       # optional, original / new class ids
    images:
      - image_id: scene0
        depth_path: rasters/scene0_depth.raw
        mask_path: rasters/scene0_mask.raw
        intrinsics: {fx: 200, fy: 200, px: 200, py: 8}
        class_label_map: {"1": 2, "2": 1}   # instance id -> class id

Relative paths resolve against the manifest's directory.

Config (JSON or YAML), every key optional::

    clean: {radius: 0.1, min_neighbors: 8, knn_k: 20, std_ratio: 2.0}
    gate: {enabled: true, thresholds_file: null}
    fit: {up_axis: null}               # null defers to the manifest
    eval: {iou_thresholds: [0.05, ..., 0.5], pr_threshold: 0.25}
    workers: 1
"""

from __future__ import annotations

import collections
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .boxfit import min_oriented_box_yaw, parse_up_axis
from .clean import CleanConfig, clean
from .errors import (
    ConfigError,
    DegenerateCloudError,
    ManifestError,
    RecordError,
    UnknownClassError,
    ValidationError,
)
from .evaluation import (
    DEFAULT_PR_THRESHOLD,
    DEFAULT_THRESHOLDS,
    ClassSplit,
    DetectionRecord,
    EvalReport,
    _image_key,
    mean_ap_over_thresholds,
)
from .formats import (
    box_record,
    dump_record,
    load_structured,
    parse_box,
    read_depth,
    read_mask,
    read_records,
    read_ref_counts,
    sidecar_path,
)
from .gate import EmbeddingTable, ThresholdTable, accept_instance, build_threshold_table
from .geometry import CameraIntrinsics, backproject

log = logging.getLogger(__name__)

SKIP_BELOW_THRESHOLD = "below point threshold"
SKIP_DEGENERATE = "degenerate cloud"
SKIP_NO_DEPTH = "no valid depth"
SKIP_UNKNOWN_CLASS = "unknown class"


# -- manifest -----------------------------------------------------------------

@dataclass(frozen=True)
class ImageEntry:
    image_id: object
    depth_path: Path
    mask_path: Path
    intrinsics: CameraIntrinsics
    class_label_map: dict


@dataclass(frozen=True)
class DatasetInfo:
    up_axis: str = "y"
    classes: dict = field(default_factory=dict)
    embedding_file: Path | None = None
    ref_counts_file: Path | None = None
    thresholds_file: Path | None = None
    partition_file: Path | None = None


@dataclass(frozen=True)
class DatasetManifest:
    path: Path
    dataset: DatasetInfo
    entries: tuple

    def __len__(self) -> int:
        return len(self.entries)


def _resolve(base: Path, value, where: str, sidecar: bool = False) -> Path:
    if not isinstance(value, str) or not value:
        raise ManifestError(f"{where}: expected a non-empty path string")
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ManifestError(f"{where}: file not found: {path}")
    if sidecar and not sidecar_path(path).is_file():
        raise ManifestError(f"{where}: raster header not found: {sidecar_path(path)}")
    return path


def _int_key(value, where: str) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise ManifestError(f"{where}: {value!r} is not an integer") from None
    if isinstance(value, bool) or out != float(value):
        raise ManifestError(f"{where}: {value!r} is not an integer")
    return out


def _parse_entry(i: int, raw, base: Path) -> ImageEntry:
    where = f"images[{i}]"
    if not isinstance(raw, Mapping):
        raise ManifestError(f"{where}: expected a mapping")
    for key in ("image_id", "depth_path", "mask_path", "intrinsics", "class_label_map"):
        if key not in raw:
            raise ManifestError(f"{where}.{key}: missing")
    image_id = raw["image_id"]
    if isinstance(image_id, bool) or not isinstance(image_id, (str, int)) or image_id == "":
        raise ManifestError(f"{where}.image_id: expected a string or integer, got {image_id!r}")
    depth = _resolve(base, raw["depth_path"], f"{where}.depth_path", sidecar=True)
    mask = _resolve(base, raw["mask_path"], f"{where}.mask_path", sidecar=True)
    intr = raw["intrinsics"]
    if not isinstance(intr, Mapping) or set(intr) != {"fx", "fy", "px", "py"}:
        raise ManifestError(f"{where}.intrinsics: expected exactly fx, fy, px, py")
    try:
        K = CameraIntrinsics(**{k: float(v) for k, v in intr.items()})
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}.intrinsics: {exc}") from None
    labels_raw = raw["class_label_map"]
    if not isinstance(labels_raw, Mapping):
        raise ManifestError(f"{where}.class_label_map: expected a mapping of instance id to class id")
    labels = {}
    for k, v in labels_raw.items():
        inst = _int_key(k, f"{where}.class_label_map")
        if inst <= 0:
            raise ManifestError(f"{where}.class_label_map: instance id {k!r} must be positive")
        labels[inst] = _int_key(v, f"{where}.class_label_map[{k!r}]")
    return ImageEntry(image_id, depth, mask, K, labels)


def _parse_dataset(raw, base: Path) -> DatasetInfo:
    if raw is None:
        return DatasetInfo()
    if not isinstance(raw, Mapping):
        raise ManifestError("dataset: expected a mapping")
    known = {f.name for f in fields(DatasetInfo)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ManifestError(f"dataset: unknown keys {unknown}")
    up = raw.get("up_axis", "y")
    try:
        parse_up_axis(up)
    except ValidationError as exc:
        raise ManifestError(f"dataset.up_axis: {exc}") from None
    classes_raw = raw.get("classes") or {}
    if not isinstance(classes_raw, Mapping):
        raise ManifestError("dataset.classes: expected a mapping of class id to name")
    classes = {_int_key(k, "dataset.classes"): str(v) for k, v in classes_raw.items()}
    files = {}
    for key in ("embedding_file", "ref_counts_file", "thresholds_file", "partition_file"):
        if raw.get(key) is not None:
            files[key] = _resolve(base, raw[key], f"dataset.{key}")
    return DatasetInfo(up_axis=str(up).lower(), classes=classes, **files)


def ingest_manifest(path) -> DatasetManifest:
    """Load and fully validate a manifest; every referenced file must exist now."""
    path = Path(path)
    doc = load_structured(path)
    if not isinstance(doc, Mapping) or "images" not in doc:
        raise ManifestError(f"{path}: expected a mapping with an 'images' list")
    if not isinstance(doc["images"], list):
        raise ManifestError(f"{path}: 'images' must be a list")
    base = path.parent
    dataset = _parse_dataset(doc.get("dataset"), base)
    entries, seen = [], {}
    for i, raw in enumerate(doc["images"]):
        entry = _parse_entry(i, raw, base)
        if entry.image_id in seen:
            raise ManifestError(
                f"images[{i}].image_id: duplicate image_id {entry.image_id!r} (first at images[{seen[entry.image_id]}])"
            )
        seen[entry.image_id] = i
        entries.append(entry)
    return DatasetManifest(path, dataset, tuple(entries))


# -- config -------------------------------------------------------------------

@dataclass(frozen=True)
class GateConfig:
    enabled: bool = True
    thresholds_file: str | None = None


@dataclass(frozen=True)
class FitConfig:
    up_axis: str | None = None

    def __post_init__(self):
        if self.up_axis is not None:
            parse_up_axis(self.up_axis)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple = DEFAULT_THRESHOLDS
    pr_threshold: float = DEFAULT_PR_THRESHOLD

    def __post_init__(self):
        thr = tuple(float(t) for t in self.iou_thresholds)
        if not thr:
            raise ConfigError("eval.iou_thresholds must not be empty")
        for t in thr + (float(self.pr_threshold),):
            if not 0 < t <= 1:
                raise ConfigError(f"IoU thresholds must lie in (0, 1], got {t}")
        object.__setattr__(self, "iou_thresholds", thr)
        object.__setattr__(self, "pr_threshold", float(self.pr_threshold))


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


@dataclass(frozen=True)
class PipelineConfig:
    clean: CleanConfig = CleanConfig()
    gate: GateConfig = GateConfig()
    fit: FitConfig = FitConfig()
    eval: EvalConfig = EvalConfig()
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.workers, bool) or int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError(f"workers must be an integer >= 1, got {self.workers!r}")

    @classmethod
    def from_dict(cls, doc) -> "PipelineConfig":
        doc = doc or {}
        if not isinstance(doc, Mapping):
            raise ConfigError("config must be a mapping")
        unknown = sorted(set(doc) - {"clean", "gate", "fit", "eval", "workers"})
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(
            clean=_section(CleanConfig, doc.get("clean"), "clean"),
            gate=_section(GateConfig, doc.get("gate"), "gate"),
            fit=_section(FitConfig, doc.get("fit"), "fit"),
            eval=_section(EvalConfig, doc.get("eval"), "eval"),
            workers=doc.get("workers", 1),
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(load_structured(path))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["eval"]["iou_thresholds"] = list(self.eval.iou_thresholds)
        return out


# -- generate -----------------------------------------------------------------

def load_threshold_table(manifest: DatasetManifest, config: PipelineConfig) -> ThresholdTable | None:
    """The gate's table: an explicit file if given, else built from counts and embeddings."""
    if not config.gate.enabled:
        return None
    ds = manifest.dataset
    table_file = config.gate.thresholds_file or ds.thresholds_file
    if table_file is not None:
        return ThresholdTable.from_dict(load_structured(table_file))
    if ds.ref_counts_file is None or ds.embedding_file is None or not ds.classes:
        raise ConfigError(
            "gating needs a thresholds file, or dataset classes with ref_counts_file and embedding_file"
        )
    emb = EmbeddingTable.load(ds.embedding_file)
    return build_threshold_table(read_ref_counts(ds.ref_counts_file), ds.classes, emb, emb)


@dataclass(frozen=True)
class _Job:
    clean: CleanConfig
    table: ThresholdTable | None
    up_axis: str


def process_image(entry: ImageEntry, job: _Job):
    """Boxes and stats for one image; validation failures are captured, not raised."""
    stats = {"image_id": entry.image_id, "instances": 0, "emitted": 0, "skipped": [], "error": None}
    records = []
    try:
        depth = read_depth(entry.depth_path)
        mask = read_mask(entry.mask_path, entry.class_label_map)
        for inst in mask.instance_ids():
            stats["instances"] += 1
            class_id = mask.labels[inst]

            def skip(reason, n=None):
                stats["skipped"].append({"instance_id": inst, "class_id": class_id, "reason": reason, "n_points": n})

            if job.table is not None and class_id not in job.table:
                skip(SKIP_UNKNOWN_CLASS)
                continue
            pc = backproject(depth, mask, entry.intrinsics, inst)
            if len(pc) == 0:
                skip(SKIP_NO_DEPTH, 0)
                continue
            pc = clean(pc, job.clean)
            if job.table is not None and not accept_instance(class_id, len(pc), job.table):
                skip(SKIP_BELOW_THRESHOLD, len(pc))
                continue
            try:
                box = min_oriented_box_yaw(pc, job.up_axis)
            except DegenerateCloudError:
                skip(SKIP_DEGENERATE, len(pc))
                continue
            records.append(box_record(entry.image_id, inst, class_id, box, n_points=len(pc)))
    except ValidationError as exc:
        stats["error"] = f"{type(exc).__name__}: {exc}"
        records = []
    stats["emitted"] = len(records)
    return records, stats


def _ordered_map(fn, items, workers: int):
    """Yield ``fn(item)`` in input order with at most ``2 * workers`` tasks in flight."""
    if workers <= 1:
        for item in items:
            yield fn(item)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        pending = collections.deque()
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= 2 * workers:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


class _Runner:
    def __init__(self, job: _Job):
        self.job = job

    def __call__(self, entry):
        return process_image(entry, self.job)


def _summarize(per_image: list) -> dict:
    reasons = collections.Counter(s["reason"] for img in per_image for s in img["skipped"])
    return {
        "images": len(per_image),
        "failed_images": sum(img["error"] is not None for img in per_image),
        "instances": sum(img["instances"] for img in per_image),
        "emitted": sum(img["emitted"] for img in per_image),
        "skipped": dict(sorted(reasons.items())),
    }


def run_generate(manifest, config: PipelineConfig | None = None, out_path=None, stats_path=None,
                 workers: int | None = None) -> dict:
    """Lift every instance of every image to a yaw-only box and stream records to ``out_path``.

    Images are processed in sorted ``image_id`` order and instances in
    ascending id, so the output bytes do not depend on the worker count.
    Returns the stats document, which is also written to ``stats_path``.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = ingest_manifest(manifest)
    config = config or PipelineConfig()
    workers = config.workers if workers is None else int(workers)
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    up_axis = config.fit.up_axis or manifest.dataset.up_axis
    job = _Job(config.clean, load_threshold_table(manifest, config), up_axis)
    entries = sorted(manifest.entries, key=lambda e: _image_key(e.image_id))

    per_image = []
    out = open(out_path, "w") if out_path is not None else None
    try:
        for records, stats in _ordered_map(_Runner(job), entries, workers):
            if stats["error"]:
                log.warning("image %s failed: %s", stats["image_id"], stats["error"])
            for s in stats["skipped"]:
                log.info("image %s instance %s skipped: %s", stats["image_id"], s["instance_id"], s["reason"])
            if out is not None:
                for rec in records:
                    out.write(dump_record(rec) + "\n")
            per_image.append(stats)
    finally:
        if out is not None:
            out.close()

    doc = {"summary": _summarize(per_image), "images": per_image}
    if stats_path is not None:
        Path(stats_path).write_text(json.dumps(doc, indent=2) + "\n")
    return doc


# -- evaluate -----------------------------------------------------------------

def load_partition(path) -> ClassSplit:
    """``{original: [ids], new: [ids], background: id}``; background is optional."""
    doc = load_structured(path)
    if not isinstance(doc, Mapping) or "original" not in doc or "new" not in doc:
        raise ValidationError(f"{path}: partition needs 'original' and 'new' class id lists")
    try:
        return ClassSplit(frozenset(doc["original"]), frozenset(doc["new"]))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _detections(records: list, path, scored: bool) -> list[DetectionRecord]:
    out = []
    for i, rec in enumerate(records):
        where = f"{path}: record {i}"
        cid = rec["class_id"]
        if isinstance(cid, bool) or not isinstance(cid, int):
            raise RecordError(f"{where}: class_id must be an integer")
        score = 1.0
        if scored:
            if not isinstance(rec["score"], (int, float)) or isinstance(rec["score"], bool):
                raise RecordError(f"{where}: score must be a number")
            score = float(rec["score"])
        try:
            out.append(DetectionRecord(rec["image_id"], cid, parse_box(rec, where), score))
        except RecordError:
            raise
        except ValidationError as exc:
            raise RecordError(f"{where}: {exc}") from None
    return out


def run_eval(pred_path, gt_path, config: PipelineConfig | None = None, partition=None) -> EvalReport:
    """Evaluate predictions against ground truth.

    Predictions either all carry ``score`` (full AP report) or none do
    (pseudo boxes: every score is 1.0 and only precision / recall are
    reported). A partition, when given, must cover every class id seen.
    """
    config = config or PipelineConfig()
    preds = read_records(pred_path)
    gts = read_records(gt_path)
    has_score = [("score" in r) for r in preds]
    if any(has_score) and not all(has_score):
        raise RecordError(f"{pred_path}: either every prediction carries a score or none does")
    scored = bool(preds) and all(has_score)
    dets = _detections(preds, pred_path, scored)
    gt_dets = _detections(gts, gt_path, False)

    split = None
    if partition is not None:
        split = partition if isinstance(partition, ClassSplit) else load_partition(partition)
        unseen = sorted({d.class_id for d in dets + gt_dets} - (split.original | split.new))
        if unseen:
            raise UnknownClassError(f"class ids {unseen} are not in the partition")
    return mean_ap_over_thresholds(
        dets,
        gt_dets,
        thresholds=config.eval.iou_thresholds,
        split=split,
        pr_threshold=config.eval.pr_threshold,
        with_ap=scored or not preds,
    )


def write_report(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
