"""Per-category point-count thresholds with embedding-based fallback mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmbeddingError, UnknownClassError, ValidationError
from .formats import read_embeddings

DIRECT = "direct"


@dataclass(frozen=True)
class EmbeddingTable:
    names: tuple
    vectors: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        vecs = np.array(self.vectors, dtype=np.float64, copy=True)
        if vecs.ndim != 2 or vecs.shape[0] != len(names):
            raise EmbeddingError("embedding table needs one row per class name")
        if len(set(names)) != len(names):
            raise EmbeddingError("embedding class names must be unique")
        if not np.all(np.isfinite(vecs)):
            raise EmbeddingError("embedding vectors must be finite")
        if len(names) and np.any(np.linalg.norm(vecs, axis=1) == 0):
            raise EmbeddingError("embedding vectors must have nonzero norm")
        vecs.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "vectors", vecs)

    @classmethod
    def from_mapping(cls, entries: Mapping[str, Sequence[float]]) -> "EmbeddingTable":
        names = list(entries)
        return cls(tuple(names), np.array([entries[n] for n in names], dtype=np.float64))

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        names, vectors = read_embeddings(path)
        return cls(tuple(names), vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name) -> bool:
        return name in self.names

    def vector(self, name: str) -> np.ndarray:
        try:
            return self.vectors[self.names.index(name)]
        except ValueError:
            raise EmbeddingError(f"no embedding for class {name!r}") from None

    def subset(self, names) -> "EmbeddingTable":
        names = list(names)
        return EmbeddingTable(tuple(names), np.array([self.vector(n) for n in names]).reshape(len(names), -1))


def cosine_similarities(query, vectors) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    return (vectors @ q) / (np.linalg.norm(vectors, axis=1) * np.linalg.norm(q))


def nearest_class_by_embedding(query, table: EmbeddingTable) -> tuple[str, float]:
    """Most cosine-similar class; exact ties go to the lexicographically first name."""
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if len(table) == 0:
        raise EmbeddingError("embedding table is empty")
    if q.shape[0] != table.dim:
        raise EmbeddingError(f"query has dimension {q.shape[0]}, table has {table.dim}")
    if not np.linalg.norm(q) > 0:
        raise EmbeddingError("query embedding must be nonzero")
    order = sorted(range(len(table)), key=lambda i: table.names[i])
    sims = cosine_similarities(q, table.vectors[order])
    best = int(np.argmax(sims))
    return table.names[order[best]], float(sims[best])


def round_count(mean_count: float) -> int:
    """Round half up, never below 1."""
    return max(1, int(math.floor(mean_count + 0.5)))


@dataclass(frozen=True)
class ThresholdTable:
    thresholds: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        for cid, t in self.thresholds.items():
            if int(t) != t or t < 1:
                raise ValidationError(f"threshold for class {cid} must be an integer >= 1, got {t}")

    def __getitem__(self, class_id) -> int:
        try:
            return self.thresholds[int(class_id)]
        except KeyError:
            raise UnknownClassError(f"class {class_id} has no point threshold") from None

    def __contains__(self, class_id) -> bool:
        return int(class_id) in self.thresholds

    def to_dict(self) -> dict:
        return {
            "classes": [
                {
                    "class_id": cid,
                    "name": self.names.get(cid),
                    "threshold": self.thresholds[cid],
                    "source": self.provenance.get(cid, DIRECT),
                }
                for cid in sorted(self.thresholds)
            ]
        }

    @classmethod
    def from_dict(cls, doc) -> "ThresholdTable":
        thresholds, provenance, names = {}, {}, {}
        for entry in doc["classes"]:
            cid = int(entry["class_id"])
            thresholds[cid] = int(entry["threshold"])
            provenance[cid] = entry.get("source", DIRECT)
            if entry.get("name") is not None:
                names[cid] = entry["name"]
        return cls(thresholds, provenance, names)


def _as_class_map(target_classes) -> dict[int, str]:
    if isinstance(target_classes, Mapping):
        return {int(k): str(v) for k, v in target_classes.items()}
    return {i: str(n) for i, n in enumerate(target_classes)}


def build_threshold_table(
    ref_counts: Mapping[str, float],
    target_classes,
    ref_emb: EmbeddingTable,
    target_emb: EmbeddingTable,
) -> ThresholdTable:
    """Thresholds for ``target_classes`` (class id -> name, or a list indexed by id).

    Classes listed in ``ref_counts`` keep their own rounded mean; every other
    class borrows the count of the most similar reference class.
    """
    if not ref_counts:
        raise ValidationError("reference counts are empty")
    classes = _as_class_map(target_classes)
    missing = [n for n in classes.values() if n not in target_emb]
    if missing:
        raise EmbeddingError(f"no embedding for target classes {sorted(set(missing))}")
    ref_names = [n for n in ref_counts if n in ref_emb]
    ref_table = ref_emb.subset(ref_names)

    thresholds, provenance = {}, {}
    for cid, name in classes.items():
        if name in ref_counts:
            thresholds[cid] = round_count(ref_counts[name])
            provenance[cid] = DIRECT
        else:
            if len(ref_table) == 0:
                raise EmbeddingError("no reference class has an embedding to map onto")
            src, _ = nearest_class_by_embedding(target_emb.vector(name), ref_table)
            thresholds[cid] = round_count(ref_counts[src])
            provenance[cid] = src
    return ThresholdTable(thresholds, provenance, classes)


def accept_instance(class_id, point_count: int, table: ThresholdTable) -> bool:
    return point_count >= table[class_id]
