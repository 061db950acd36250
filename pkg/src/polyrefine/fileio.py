"""Weight files, annotation JSON, and image loading.

Weight file layout (all integers little-endian):

    magic   4 bytes  b"PRWF"
    version u32      currently 1
    count   u32      number of named tensors
    entry   repeated, sorted by name:
        name_len u16, name utf-8 bytes
        ndim     u8,  dims u32 each
        data     float64 little-endian, row-major

Saving sorts entries by name, so save -> load -> save is byte-identical.

Annotation JSON schema (shared with the browser client):

    {"version": 1,
     "annotations": [{"image_id": str,
                      "bbox": [x, y, w, h],
                      "polygon": [[x, y], ...],
                      "region_class": one of the eight class names,
                      "source": "ground_truth" | "predicted" | "human_corrected"}]}
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .masknet import REGION_CLASSES

MAGIC = b"PRWF"
VERSION = 1

ANNOTATION_SOURCES = ("ground_truth", "predicted", "human_corrected")
BBOX_TOLERANCE_PX = 5.0


class WeightFormatError(ValueError):
    """Raised for malformed weight files, with the failing byte offset."""


def save_weights(weights: dict[str, Tensor], path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(weights)))
    for name in sorted(weights):
        data = np.ascontiguousarray(weights[name].data, dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
        buf.write(data.tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read_exact(f, n: int, what: str):
    data = f.read(n)
    if len(data) != n:
        raise WeightFormatError(f"truncated weight file at byte {f.tell()}: expected {what}")
    return data


def load_weights(path) -> dict[str, Tensor]:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise WeightFormatError("not a weight file (bad magic at byte 0)")
        version, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != VERSION:
            raise WeightFormatError(f"unsupported weight file version {version}")
        weights: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "shape"))
            n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
            raw = _read_exact(f, n_bytes, f"data for {name!r}")
            weights[name] = Tensor(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        if f.read(1):
            raise WeightFormatError(f"trailing bytes after byte {f.tell() - 1}")
    return weights


def weights_digest(weights: dict[str, Tensor]) -> str:
    """Stable short hash of a weight set (used by the service health check)."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(weights):
        h.update(name.encode())
        h.update(np.ascontiguousarray(weights[name].data, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# annotations


@dataclass
class RegionAnnotation:
    image_id: str
    bbox: tuple[float, float, float, float]  # (x, y, w, h)
    polygon: np.ndarray  # (N, 2)
    region_class: str
    source: str = "predicted"

    def validate(self, where: str = "annotation") -> None:
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValueError(f"{where}.image_id: must be a non-empty string")
        if len(self.bbox) != 4:
            raise ValueError(f"{where}.bbox: expected [x, y, w, h]")
        x, y, w, h = (float(v) for v in self.bbox)
        if w <= 0 or h <= 0:
            raise ValueError(f"{where}.bbox: width and height must be positive")
        poly = np.asarray(self.polygon, dtype=np.float64)
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise ValueError(f"{where}.polygon: expected an (N>=3, 2) point list")
        if not np.isfinite(poly).all():
            raise ValueError(f"{where}.polygon: non-finite coordinate")
        t = BBOX_TOLERANCE_PX
        if (
            poly[:, 0].min() < x - t
            or poly[:, 0].max() > x + w + t
            or poly[:, 1].min() < y - t
            or poly[:, 1].max() > y + h + t
        ):
            raise ValueError(f"{where}.polygon: points outside bbox (tolerance {t} px)")
        if self.region_class not in REGION_CLASSES:
            raise ValueError(
                f"{where}.region_class: unknown class {self.region_class!r}; "
                f"expected one of {', '.join(REGION_CLASSES)}"
            )
        if self.source not in ANNOTATION_SOURCES:
            raise ValueError(
                f"{where}.source: unknown source {self.source!r}; "
                f"expected one of {', '.join(ANNOTATION_SOURCES)}"
            )

    def to_json_obj(self) -> dict:
        return {
            "image_id": self.image_id,
            "bbox": [float(v) for v in self.bbox],
            "polygon": [[float(x), float(y)] for x, y in np.asarray(self.polygon)],
            "region_class": self.region_class,
            "source": self.source,
        }


def save_annotations(annotations: list[RegionAnnotation], path) -> None:
    for i, ann in enumerate(annotations):
        ann.validate(where=f"annotations[{i}]")
    doc = {"version": 1, "annotations": [a.to_json_obj() for a in annotations]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_annotations(path) -> list[RegionAnnotation]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"annotation file is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise ValueError("annotations.version: expected 1")
    items = doc.get("annotations")
    if not isinstance(items, list):
        raise ValueError("annotations: expected a list")
    out = []
    for i, obj in enumerate(items):
        where = f"annotations[{i}]"
        if not isinstance(obj, dict):
            raise ValueError(f"{where}: expected an object")
        missing = {"image_id", "bbox", "polygon", "region_class"} - obj.keys()
        if missing:
            raise ValueError(f"{where}: missing field(s) {', '.join(sorted(missing))}")
        ann = RegionAnnotation(
            image_id=obj["image_id"],
            bbox=tuple(obj["bbox"]),
            polygon=np.asarray(obj["polygon"], dtype=np.float64),
            region_class=obj["region_class"],
            source=obj.get("source", "predicted"),
        )
        ann.validate(where=where)
        out.append(ann)
    return out


# ---------------------------------------------------------------------------
# images


def load_image(path) -> np.ndarray:
    """PNG/JPEG file -> (3, H, W) float64 array in [0, 1]."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def save_image(image: np.ndarray, path) -> None:
    """(3, H, W) float array in [0, 1] -> 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {arr.shape}")
    Image.fromarray((arr.transpose(1, 2, 0) * 255).round().astype(np.uint8)).save(path)


def image_to_png_bytes(image: np.ndarray) -> bytes:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    buf = io.BytesIO()
    Image.fromarray((arr.transpose(1, 2, 0) * 255).round().astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))
