"""On-disk formats: rasters, embedding tables, reference counts and box records.

Raster
    Raw little-endian row-major payload at ``<path>`` plus a JSON sidecar at
    ``<path>.json``: ``{"width": W, "height": H, "channels": 1, "dtype": D}``.
    Depth rasters use ``float32``, instance masks ``uint16``.

Embedding table (binary)
    Payload ``<path>``: ``count * dim`` little-endian float32 values, one row per
    entry. Sidecar ``<path>.json``: ``{"dim": D, "count": N, "dtype": "float32",
    "names": [...]}`` with names in payload row order.

Embedding table (text)
    A single ``.json`` file ``{"dim": D, "count": N, "entries": [{"name": ...,
    "vector": [...]}, ...]}``. Values are rounded through float32 on load so both
    encodings decode to identical tables.

Box record
    One JSON object per line: ``{"image_id", "instance_id", "class_id",
    "center": [x, y, z], "dims": [w, h, l], "R": [9 values, row-major],
    "n_points"}``; predictions add ``"score"``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml

from .errors import EmbeddingError, RecordError, ValidationError
from .geometry import DepthMap, InstanceMask, OrientedBox3D

RASTER_DTYPES = {"float32": "<f4", "uint16": "<u2"}


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_raster(path, array, dtype: str) -> None:
    if dtype not in RASTER_DTYPES:
        raise ValidationError(f"unsupported raster dtype {dtype!r}")
    arr = np.ascontiguousarray(np.asarray(array), dtype=RASTER_DTYPES[dtype])
    if arr.ndim != 2:
        raise ValidationError("raster must be 2D")
    path = Path(path)
    path.write_bytes(arr.tobytes())
    header = {"width": arr.shape[1], "height": arr.shape[0], "channels": 1, "dtype": dtype}
    sidecar_path(path).write_text(json.dumps(header) + "\n")


def read_raster_header(path) -> dict:
    header = json.loads(sidecar_path(path).read_text())
    for key in ("width", "height", "channels", "dtype"):
        if key not in header:
            raise ValidationError(f"{sidecar_path(path)}: header missing {key!r}")
    if header["channels"] != 1:
        raise ValidationError(f"{sidecar_path(path)}: only single-channel rasters are supported")
    if header["dtype"] not in RASTER_DTYPES:
        raise ValidationError(f"{sidecar_path(path)}: unsupported dtype {header['dtype']!r}")
    return header


def read_raster(path, expect_dtype: str | None = None) -> np.ndarray:
    header = read_raster_header(path)
    if expect_dtype is not None and header["dtype"] != expect_dtype:
        raise ValidationError(f"{path}: expected dtype {expect_dtype}, header says {header['dtype']}")
    dtype = np.dtype(RASTER_DTYPES[header["dtype"]])
    payload = Path(path).read_bytes()
    w, h = int(header["width"]), int(header["height"])
    if len(payload) != w * h * dtype.itemsize:
        raise ValidationError(f"{path}: payload has {len(payload)} bytes, header implies {w * h * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(h, w)


def read_depth(path) -> DepthMap:
    return DepthMap(read_raster(path, "float32").astype(np.float64))


def read_mask(path, labels) -> InstanceMask:
    return InstanceMask(read_raster(path, "uint16").astype(np.int64), labels)


def load_structured(path):
    """Parse a JSON or YAML document."""
    with open(path) as fh:
        try:
            return yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: cannot parse: {exc}") from None


# -- embeddings ---------------------------------------------------------------

def write_embeddings(path, names, vectors, binary: bool | None = None) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    names = [str(n) for n in names]
    if vectors.ndim != 2 or vectors.shape[0] != len(names):
        raise EmbeddingError("need one vector per name")
    path = Path(path)
    if binary is None:
        binary = path.suffix != ".json"
    dim, count = vectors.shape[1], vectors.shape[0]
    if binary:
        path.write_bytes(np.ascontiguousarray(vectors).tobytes())
        header = {"dim": dim, "count": count, "dtype": "float32", "names": names}
        sidecar_path(path).write_text(json.dumps(header) + "\n")
    else:
        entries = [{"name": n, "vector": [float(x) for x in vec]} for n, vec in zip(names, vectors)]
        path.write_text(json.dumps({"dim": dim, "count": count, "entries": entries}) + "\n")


def read_embeddings(path):
    """Return ``(names, vectors)`` from either embedding encoding."""
    path = Path(path)
    side = sidecar_path(path)
    if side.exists():
        header = json.loads(side.read_text())
        dim, count, names = int(header["dim"]), int(header["count"]), list(header["names"])
        if header.get("dtype", "float32") != "float32":
            raise EmbeddingError(f"{path}: embeddings must be float32")
        data = np.frombuffer(path.read_bytes(), dtype="<f4")
        if data.size != dim * count or len(names) != count:
            raise EmbeddingError(f"{path}: payload does not match header dim={dim} count={count}")
        vectors = data.reshape(count, dim)
    else:
        doc = json.loads(path.read_text())
        dim, entries = int(doc["dim"]), doc["entries"]
        if int(doc.get("count", len(entries))) != len(entries):
            raise EmbeddingError(f"{path}: count does not match number of entries")
        names = [str(e["name"]) for e in entries]
        vectors = np.array([e["vector"] for e in entries], dtype="<f4").reshape(len(entries), dim)
    return names, vectors.astype(np.float64)


def read_ref_counts(path) -> dict[str, float]:
    doc = load_structured(path)
    if not isinstance(doc, dict) or not doc:
        raise ValidationError(f"{path}: expected a non-empty mapping of class name to mean count")
    out = {}
    for name, val in doc.items():
        val = float(val)
        if not np.isfinite(val) or val < 0:
            raise ValidationError(f"{path}: invalid mean count {val} for {name!r}")
        out[str(name)] = val
    return out


# -- box records --------------------------------------------------------------

def box_record(image_id, instance_id, class_id, box: OrientedBox3D, n_points=None, score=None) -> dict:
    rec = {
        "image_id": image_id,
        "instance_id": int(instance_id),
        "class_id": int(class_id),
        "center": [float(x) for x in box.center],
        "dims": [float(x) for x in box.dims],
        "R": [float(x) for x in box.rotation.reshape(-1)],
    }
    if n_points is not None:
        rec["n_points"] = int(n_points)
    if score is not None:
        rec["score"] = float(score)
    return rec


def dump_record(rec: dict) -> str:
    return json.dumps(rec, separators=(", ", ": "))


def parse_box(rec: dict, where: str = "") -> OrientedBox3D:
    try:
        R = np.asarray(rec["R"], dtype=np.float64)
        if R.size != 9:
            raise RecordError(f"{where}: R must have 9 entries")
        return OrientedBox3D(rec["center"], rec["dims"], R.reshape(3, 3))
    except KeyError as exc:
        raise RecordError(f"{where}: missing field {exc.args[0]!r}") from None
    except RecordError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        raise RecordError(f"{where}: {exc}") from None


def read_records(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{lineno}: {exc}") from None
            for key in ("image_id", "class_id", "center", "dims", "R"):
                if key not in rec:
                    raise RecordError(f"{path}:{lineno}: missing field {key!r}")
            out.append(rec)
    return out
