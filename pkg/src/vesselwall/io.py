"""Data model and on-disk formats shared by every stage.

Dense arrays (volumes, probability maps, label masks) use a JSON header next
to a raw little-endian float32 payload.  Detections, contours and reports are
plain JSON arrays.  Coordinates are floats; voxel ``(i, j)`` covers
``[i, i+1) x [j, j+1)`` and its center sits at ``(i + 0.5, j + 0.5)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

DTYPE_TAG = "f32le"


class FormatError(ValueError):
    """A file or value violates its format; the message names the field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class Volume:
    """Stack of equally spaced slices; ``voxels`` is indexed ``[z, y, x]``."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.voxels = np.ascontiguousarray(self.voxels, dtype=np.float32)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.validate()

    @property
    def width(self) -> int:
        return int(self.voxels.shape[2])

    @property
    def height(self) -> int:
        return int(self.voxels.shape[1])

    @property
    def depth(self) -> int:
        return int(self.voxels.shape[0])

    def validate(self):
        if self.voxels.ndim != 3:
            raise FormatError("voxels", f"expected 3 dimensions, got {self.voxels.ndim}")
        for name, n in zip(("depth", "height", "width"), self.voxels.shape):
            if n < 1:
                raise FormatError(name, f"must be >= 1, got {n}")
        if len(self.spacing) != 3:
            raise FormatError("spacing", "expected three components")
        for s in self.spacing:
            if not (math.isfinite(s) and s > 0):
                raise FormatError("spacing", f"components must be > 0, got {self.spacing}")


@dataclass
class BoundingBox:
    slice: int
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0
    interpolated: bool = False

    def __post_init__(self):
        self.slice = int(self.slice)
        self.x, self.y, self.w, self.h = (float(v) for v in (self.x, self.y, self.w, self.h))
        self.score = float(self.score)
        self.interpolated = bool(self.interpolated)
        _check_box(self)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass
class ContourSet:
    """Lumen and outer wall polygons of one vessel on one slice.

    Polygons are ``(n, 2)`` arrays of ``(x, y)`` vertices; closure is implied
    (the first vertex is not repeated).
    """

    slice: int
    lumen: np.ndarray
    outer: np.ndarray
    confidence: float = float("nan")
    vessel: int = 0

    def __post_init__(self):
        self.slice = int(self.slice)
        self.vessel = int(self.vessel)
        self.confidence = float(self.confidence)
        self.lumen = _polygon(self.lumen, "lumen")
        self.outer = _polygon(self.outer, "outer")


def _check_box(b: BoundingBox):
    for name in ("x", "y", "w", "h", "score"):
        if not math.isfinite(getattr(b, name)):
            raise FormatError(name, "must be finite")
    if b.slice < 0:
        raise FormatError("slice", f"must be >= 0, got {b.slice}")
    if b.w <= 0:
        raise FormatError("w", f"must be > 0, got {b.w}")
    if b.h <= 0:
        raise FormatError("h", f"must be > 0, got {b.h}")
    if not 0.0 <= b.score <= 1.0:
        raise FormatError("score", f"must lie in [0, 1], got {b.score}")
    if b.interpolated and b.score != 0.0:
        raise FormatError("score", "interpolated boxes carry score 0")


def _polygon(points, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise FormatError(name, f"expected (n >= 3, 2) vertices, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError(name, "vertices must be finite")
    return arr


# -- dense arrays -------------------------------------------------------------

def _payload_path(header_path: Path) -> Path:
    return header_path.with_suffix(".raw")


def _dump_json(obj: Any, path: Path):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def write_volume(v: Volume, path: str | os.PathLike):
    """Write ``path`` (JSON header) and its ``.raw`` sibling (float32 LE)."""
    v.validate()
    path = Path(path)
    header = {
        "width": v.width,
        "height": v.height,
        "depth": v.depth,
        "spacing": list(v.spacing),
        "dtype": DTYPE_TAG,
        "payload": _payload_path(path).name,
    }
    payload = v.voxels.astype("<f4", copy=False).tobytes(order="C")
    _dump_json(header, path)
    _payload_path(path).write_bytes(payload)


def read_volume(path: str | os.PathLike) -> Volume:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"volume header not found: {path}")
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError("header", f"invalid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise FormatError("header", "expected a JSON object")
    dims = []
    for key in ("width", "height", "depth"):
        val = header.get(key)
        if not isinstance(val, int) or isinstance(val, bool):
            raise FormatError(key, f"expected an integer, got {val!r}")
        if val < 1:
            raise FormatError(key, f"must be >= 1, got {val}")
        dims.append(val)
    width, height, depth = dims
    spacing = header.get("spacing")
    if (not isinstance(spacing, list) or len(spacing) != 3
            or not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in spacing)):
        raise FormatError("spacing", f"expected three numbers, got {spacing!r}")
    if not all(s > 0 for s in spacing):
        raise FormatError("spacing", f"components must be > 0, got {spacing}")
    if header.get("dtype") != DTYPE_TAG:
        raise FormatError("dtype", f"expected {DTYPE_TAG!r}, got {header.get('dtype')!r}")
    payload_name = header.get("payload", _payload_path(path).name)
    payload_path = path.parent / payload_name
    if not payload_path.is_file():
        raise FileNotFoundError(f"volume payload not found: {payload_path}")
    raw = payload_path.read_bytes()
    expected = width * height * depth * 4
    if len(raw) != expected:
        raise FormatError(
            "payload", f"size mismatch: header implies {expected} bytes, file has {len(raw)}")
    voxels = np.frombuffer(raw, dtype="<f4").reshape(depth, height, width)
    return Volume(voxels.astype(np.float32), tuple(float(s) for s in spacing))


POLAR_SHAPE = (180, 256)


def write_probmap(maps: np.ndarray, path: str | os.PathLike):
    """Store a ``(n, 180, 256)`` stack of polar maps in the volume format."""
    maps = np.asarray(maps)
    if maps.ndim == 2:
        maps = maps[None]
    if maps.shape[1:] != POLAR_SHAPE:
        raise FormatError("probmap", f"expected (n, 180, 256), got {maps.shape}")
    write_volume(Volume(maps, (1.0, 1.0, 1.0)), path)


def read_probmap(path: str | os.PathLike) -> np.ndarray:
    v = read_volume(path)
    if (v.height, v.width) != POLAR_SHAPE:
        raise FormatError("probmap", f"expected 180x256 planes, got {v.height}x{v.width}")
    return v.voxels


# -- JSON records ---------------------------------------------------------------

def box_to_dict(b: BoundingBox) -> dict:
    return {"slice": b.slice, "x": b.x, "y": b.y, "w": b.w, "h": b.h,
            "score": b.score, "interpolated": b.interpolated}


def box_from_dict(rec: Any, where: str = "box") -> BoundingBox:
    if not isinstance(rec, dict):
        raise FormatError(where, "expected an object")
    try:
        slice_ = rec["slice"]
        vals = {k: rec[k] for k in ("x", "y", "w", "h", "score")}
    except KeyError as exc:
        raise FormatError(f"{where}.{exc.args[0]}", "missing") from None
    if not isinstance(slice_, int) or isinstance(slice_, bool):
        raise FormatError(f"{where}.slice", f"expected an integer, got {slice_!r}")
    for k, val in vals.items():
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise FormatError(f"{where}.{k}", f"expected a number, got {val!r}")
    interp = rec.get("interpolated", False)
    if not isinstance(interp, bool):
        raise FormatError(f"{where}.interpolated", f"expected a boolean, got {interp!r}")
    try:
        return BoundingBox(slice_, interpolated=interp, **vals)
    except FormatError as exc:
        raise FormatError(f"{where}.{exc.field}", str(exc).split(": ", 1)[1]) from None


def _load_json_array(path: Path, what: str) -> list:
    if not path.is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(what, f"invalid JSON ({exc})") from None
    if not isinstance(data, list):
        raise FormatError(what, "expected a JSON array")
    return data


def write_detections(boxes: Iterable[BoundingBox], path: str | os.PathLike):
    _dump_json([box_to_dict(b) for b in boxes], Path(path))


def read_detections(path: str | os.PathLike) -> list[BoundingBox]:
    data = _load_json_array(Path(path), "detections")
    return [box_from_dict(rec, f"detections[{i}]") for i, rec in enumerate(data)]


def contour_to_dict(c: ContourSet) -> dict:
    return {
        "slice": c.slice,
        "vessel": c.vessel,
        "confidence": c.confidence if math.isfinite(c.confidence) else None,
        "lumen": c.lumen.tolist(),
        "outer": c.outer.tolist(),
    }


def contour_from_dict(rec: Any, where: str = "contour") -> ContourSet:
    if not isinstance(rec, dict):
        raise FormatError(where, "expected an object")
    for key in ("slice", "lumen", "outer"):
        if key not in rec:
            raise FormatError(f"{where}.{key}", "missing")
    conf = rec.get("confidence")
    if conf is None:
        conf = float("nan")
    elif not isinstance(conf, (int, float)) or isinstance(conf, bool):
        raise FormatError(f"{where}.confidence", f"expected a number, got {conf!r}")
    slice_ = rec["slice"]
    if not isinstance(slice_, int) or isinstance(slice_, bool) or slice_ < 0:
        raise FormatError(f"{where}.slice", f"expected a non-negative integer, got {slice_!r}")
    try:
        return ContourSet(slice_, rec["lumen"], rec["outer"], conf, rec.get("vessel", 0))
    except FormatError as exc:
        raise FormatError(f"{where}.{exc.field}", str(exc).split(": ", 1)[1]) from None
    except (TypeError, ValueError) as exc:
        raise FormatError(where, f"malformed polygon ({exc})") from None


def write_contours(contours: Iterable[ContourSet], path: str | os.PathLike):
    _dump_json([contour_to_dict(c) for c in contours], Path(path))


def read_contours(path: str | os.PathLike) -> list[ContourSet]:
    data = _load_json_array(Path(path), "contours")
    return [contour_from_dict(rec, f"contours[{i}]") for i, rec in enumerate(data)]


def write_json(obj: Any, path: str | os.PathLike):
    """Deterministic JSON for reports, configs and centerlines."""
    _dump_json(obj, Path(path))


def read_json(path: str | os.PathLike) -> Any:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(path.name, f"invalid JSON ({exc})") from None
