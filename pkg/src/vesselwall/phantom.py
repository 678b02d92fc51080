"""Synthetic black-blood volumes with exact ground truth.

Each vessel is an annulus (dark lumen, bright wall) whose center follows a
sinusoid plus linear drift along the slices.  Pixels are anti-aliased by 4x4
supersampled coverage.  Noise is Gaussian with one RNG stream per slice, and
dropout slices are zeroed to imitate unusable images.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .io import (BoundingBox, ContourSet, FormatError, Volume, box_from_dict, box_to_dict,
                 read_contours, read_json, read_volume, write_contours, write_json, write_volume)
from .polar import DEG_PER_ROW, N_THETA
from .tracklet import Centerline, centerline_from_dict, centerline_to_dict

SUPERSAMPLE = 4


@dataclass
class Bifurcation:
    """A branch leaving the parent at ``slice`` and drifting away at ``rate`` px/slice."""

    slice: int
    angle_deg: float = 0.0
    rate: float = 1.5
    scale: float = 0.75


@dataclass
class VesselSpec:
    x: float
    y: float
    lumen_radius: float | tuple[float, float] = 10.0
    wall_thickness: float | tuple[float, float] = 4.0
    amplitude: tuple[float, float] = (0.0, 0.0)
    period: float = 40.0
    phase: float = 0.0
    drift: tuple[float, float] = (0.0, 0.0)
    z_range: tuple[int, int] | None = None
    bifurcation: Bifurcation | None = None

    def span(self, depth: int) -> tuple[int, int]:
        if self.z_range is None:
            return 0, depth - 1
        return int(self.z_range[0]), int(self.z_range[1])

    def center(self, z: float) -> tuple[float, float]:
        s = math.sin(2.0 * math.pi * z / self.period + self.phase)
        return (self.x + self.amplitude[0] * s + self.drift[0] * z,
                self.y + self.amplitude[1] * s + self.drift[1] * z)

    def radii(self, z: int, depth: int) -> tuple[float, float]:
        z0, z1 = self.span(depth)
        f = 0.0 if z1 == z0 else (z - z0) / (z1 - z0)
        rl = _lerp(self.lumen_radius, f)
        return rl, rl + _lerp(self.wall_thickness, f)


def _lerp(v, f):
    if isinstance(v, (int, float)):
        return float(v)
    return float(v[0]) + (float(v[1]) - float(v[0])) * f


@dataclass
class PhantomSpec:
    width: int = 160
    height: int = 160
    depth: int = 40
    spacing: tuple[float, float, float] = (0.57, 0.57, 2.0)
    vessels: list[VesselSpec] = field(default_factory=list)
    distractors: list[VesselSpec] = field(default_factory=list)
    lumen_intensity: float = 0.05
    wall_intensity: float = 1.0
    background_intensity: float = 0.25
    noise_sigma: float = 0.04
    dropout_slices: list[int] = field(default_factory=list)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)

        def vessel(rec):
            rec = dict(rec)
            if rec.get("bifurcation") is not None:
                rec["bifurcation"] = Bifurcation(**rec["bifurcation"])
            for key in ("amplitude", "drift", "z_range", "lumen_radius", "wall_thickness"):
                if isinstance(rec.get(key), list):
                    rec[key] = tuple(rec[key])
            return VesselSpec(**rec)

        d["vessels"] = [vessel(v) for v in d.get("vessels", [])]
        d["distractors"] = [vessel(v) for v in d.get("distractors", [])]
        if "spacing" in d:
            d["spacing"] = tuple(d["spacing"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise FormatError("phantom", str(exc)) from None


@dataclass
class GroundTruth:
    """Per-vessel analytic truth.  Vessel ids index ``PhantomSpec.vessels``
    first, then branches, then distractors; only targets carry labels."""

    boxes: dict[int, list[BoundingBox]]
    contours: list[ContourSet]
    wall_labels: np.ndarray  # (depth, height, width); 0 = none, id + 1 = vessel id
    centerlines: dict[int, Centerline]
    targets: list[int]
    dropouts: list[int]

    def target_boxes(self) -> list[BoundingBox]:
        out = [b for vid in self.targets for b in self.boxes[vid]]
        return sorted(out, key=lambda b: b.slice)

    def wall_mask(self, vessel: int, z: int) -> np.ndarray:
        return self.wall_labels[z] == vessel + 1


@dataclass
class _Section:
    vessel: int
    z: int
    cx: float
    cy: float
    r_lumen: float
    r_outer: float


def _sections(spec: PhantomSpec):
    """All rendered cross-sections plus the ids of target vessels."""
    out = []
    n_targets = len(spec.vessels)
    branch_ids = {}
    next_id = n_targets
    for i, v in enumerate(spec.vessels):
        if v.bifurcation is not None:
            branch_ids[i] = next_id
            next_id += 1
    distractor_base = next_id
    for i, v in enumerate(spec.vessels):
        z0, z1 = v.span(spec.depth)
        for z in range(z0, z1 + 1):
            cx, cy = v.center(z)
            rl, ro = v.radii(z, spec.depth)
            out.append(_Section(i, z, cx, cy, rl, ro))
            bif = v.bifurcation
            if bif is not None and z >= bif.slice:
                d = (z - bif.slice) * bif.rate
                a = math.radians(bif.angle_deg)
                out.append(_Section(branch_ids[i], z, cx + d * math.cos(a), cy + d * math.sin(a),
                                    rl * bif.scale, ro * bif.scale))
    for j, v in enumerate(spec.distractors):
        z0, z1 = v.span(spec.depth)
        for z in range(z0, z1 + 1):
            cx, cy = v.center(z)
            rl, ro = v.radii(z, spec.depth)
            out.append(_Section(distractor_base + j, z, cx, cy, rl, ro))
    return out, list(range(n_targets))


def validate(spec: PhantomSpec):
    if min(spec.width, spec.height, spec.depth) < 1:
        raise FormatError("dims", "width, height and depth must be >= 1")
    if not min(spec.spacing) > 0:
        raise FormatError("spacing", "components must be > 0")
    if not spec.lumen_intensity < spec.background_intensity < spec.wall_intensity:
        raise FormatError("intensities", "need lumen < background < wall")
    if spec.noise_sigma < 0:
        raise FormatError("noise_sigma", "must be >= 0")
    for z in spec.dropout_slices:
        if not 0 <= z < spec.depth:
            raise FormatError("dropout_slices", f"slice {z} outside volume")
    sections, _ = _sections(spec)
    for s in sections:
        if not (s.r_lumen > 0 and s.r_outer > s.r_lumen):
            raise FormatError("vessels", f"vessel {s.vessel} needs lumen radius > 0 and "
                                         f"wall thickness > 0 (slice {s.z})")
        if not (0 <= s.z < spec.depth):
            raise FormatError("vessels", f"vessel {s.vessel} slice {s.z} outside volume")
        if (s.cx - s.r_outer < 0 or s.cy - s.r_outer < 0
                or s.cx + s.r_outer > spec.width or s.cy + s.r_outer > spec.height):
            raise FormatError("vessels", f"vessel {s.vessel} leaves the volume on slice {s.z}")


def disk_coverage(cx: float, cy: float, r: float, x0: int, y0: int, w: int, h: int,
                  ss: int = SUPERSAMPLE) -> np.ndarray:
    """Fraction of each pixel of the window ``[x0, x0+w) x [y0, y0+h)`` inside
    the disk, estimated on an ``ss x ss`` grid of sub-pixel centers."""
    sub = (np.arange(ss) + 0.5) / ss
    xs = (x0 + np.arange(w))[:, None] + sub[None, :] - cx
    ys = (y0 + np.arange(h))[:, None] + sub[None, :] - cy
    inside = (ys[:, None, :, None] ** 2 + xs[None, :, None, :] ** 2) <= r * r
    return inside.mean(axis=(2, 3))


def generate(spec: PhantomSpec) -> tuple[Volume, GroundTruth]:
    validate(spec)
    sections, targets = _sections(spec)
    vox = np.full((spec.depth, spec.height, spec.width), spec.background_intensity)
    labels = np.zeros((spec.depth, spec.height, spec.width), dtype=np.uint8)
    jj, ii = np.meshgrid(np.arange(spec.height) + 0.5, np.arange(spec.width) + 0.5,
                         indexing="ij")
    boxes: dict[int, list[BoundingBox]] = {}
    contours = []
    paths: dict[int, list] = {}
    ang = np.deg2rad(np.arange(N_THETA) * DEG_PER_ROW)
    for s in sections:
        x0 = max(int(math.floor(s.cx - s.r_outer)) - 1, 0)
        y0 = max(int(math.floor(s.cy - s.r_outer)) - 1, 0)
        x1 = min(int(math.ceil(s.cx + s.r_outer)) + 1, spec.width)
        y1 = min(int(math.ceil(s.cy + s.r_outer)) + 1, spec.height)
        w, h = x1 - x0, y1 - y0
        c_out = disk_coverage(s.cx, s.cy, s.r_outer, x0, y0, w, h)
        c_in = disk_coverage(s.cx, s.cy, s.r_lumen, x0, y0, w, h)
        region = vox[s.z, y0:y1, x0:x1]
        vox[s.z, y0:y1, x0:x1] = (region * (1.0 - c_out)
                                  + spec.wall_intensity * (c_out - c_in)
                                  + spec.lumen_intensity * c_in)
        d = np.hypot(ii[y0:y1, x0:x1] - s.cx, jj[y0:y1, x0:x1] - s.cy)
        ring = (d >= s.r_lumen) & (d <= s.r_outer)
        labels[s.z, y0:y1, x0:x1][ring] = s.vessel + 1
        boxes.setdefault(s.vessel, []).append(
            BoundingBox(s.z, s.cx - s.r_outer, s.cy - s.r_outer, 2 * s.r_outer, 2 * s.r_outer))
        contours.append(ContourSet(
            s.z,
            np.column_stack([s.cx + s.r_lumen * np.cos(ang), s.cy + s.r_lumen * np.sin(ang)]),
            np.column_stack([s.cx + s.r_outer * np.cos(ang), s.cy + s.r_outer * np.sin(ang)]),
            1.0, s.vessel))
        paths.setdefault(s.vessel, []).append((s.z, s.cx, s.cy))

    if spec.noise_sigma > 0:
        for z in range(spec.depth):
            rng = np.random.default_rng([spec.seed, z])
            vox[z] += rng.normal(0.0, spec.noise_sigma, size=vox[z].shape)
    for z in spec.dropout_slices:
        vox[z] = 0.0

    centerlines = {}
    for vid, pts in paths.items():
        pts.sort()
        centerlines[vid] = Centerline(pts[0][0], [(x, y) for _, x, y in pts])
    contours.sort(key=lambda c: (c.vessel, c.slice))
    truth = GroundTruth(boxes, contours, labels, centerlines, targets,
                        sorted(set(spec.dropout_slices)))
    return Volume(vox.astype(np.float32), spec.spacing), truth


def annulus_area(r_lumen: float, r_outer: float) -> float:
    return math.pi * (r_outer ** 2 - r_lumen ** 2)


def default_suite(seed: int = 0, n: int = 10) -> list[PhantomSpec]:
    """Two target arteries per volume plus short distractors and dropouts.

    Targets sit on opposite sides of a 160x160 field far enough apart that
    neither enters the other's 64-pixel polar field of view.
    """
    specs = []
    for case in range(n):
        rng = np.random.default_rng([seed, 7919, case])
        vessels = []
        for side in (0, 1):
            rl = float(rng.uniform(6.0, 14.0))
            t = float(rng.uniform(3.0, 6.0))
            x = float(rng.uniform(28.0, 32.0)) if side == 0 else float(rng.uniform(128.0, 132.0))
            vessels.append(VesselSpec(
                x=x,
                y=float(rng.uniform(65.0, 95.0)),
                lumen_radius=(rl, float(np.clip(rl + rng.uniform(-1.0, 1.0), 6.0, 14.0))),
                wall_thickness=(t, float(np.clip(t + rng.uniform(-0.5, 0.5), 3.0, 6.0))),
                amplitude=(float(rng.uniform(0.0, 3.0)), float(rng.uniform(0.0, 4.0))),
                period=float(rng.uniform(30.0, 60.0)),
                phase=float(rng.uniform(0.0, 2.0 * math.pi)),
            ))
        distractors = []
        for _ in range(int(rng.integers(1, 3))):
            z0 = int(rng.integers(0, 34))
            distractors.append(VesselSpec(
                x=float(rng.uniform(70.0, 90.0)),
                y=float(rng.choice([14.0, 146.0])),
                lumen_radius=float(rng.uniform(2.5, 4.0)),
                wall_thickness=float(rng.uniform(2.5, 3.5)),
                z_range=(z0, z0 + int(rng.integers(2, 6))),
            ))
        n_drop = int(rng.integers(1, 3))
        dropouts = sorted(int(z) for z in rng.choice(np.arange(3, 37), n_drop, replace=False))
        specs.append(PhantomSpec(vessels=vessels, distractors=distractors,
                                 dropout_slices=dropouts, seed=seed * 100 + case))
    return specs


# -- files ---------------------------------------------------------------------------

def write_truth(truth: GroundTruth, out_dir, spacing) -> None:
    """``truth.json`` (boxes, centerlines, ids), ``truth_contours.json`` and a
    label volume ``truth_masks.json`` + ``.raw``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vessels = []
    for vid in sorted(truth.boxes):
        vessels.append({
            "id": vid,
            "target": vid in truth.targets,
            "boxes": [box_to_dict(b) for b in truth.boxes[vid]],
            "centerline": centerline_to_dict(truth.centerlines[vid], vid),
        })
    write_json({"targets": truth.targets, "dropouts": truth.dropouts, "vessels": vessels},
               out / "truth.json")
    write_contours(truth.contours, out / "truth_contours.json")
    write_volume(Volume(truth.wall_labels.astype(np.float32), spacing), out / "truth_masks.json")


def read_truth(in_dir) -> GroundTruth:
    src = Path(in_dir)
    meta = read_json(src / "truth.json")
    if not isinstance(meta, dict) or "vessels" not in meta:
        raise FormatError("truth.json", "expected an object with 'vessels'")
    boxes, centerlines = {}, {}
    for i, rec in enumerate(meta["vessels"]):
        vid = int(rec["id"])
        boxes[vid] = [box_from_dict(b, f"vessels[{i}].boxes") for b in rec["boxes"]]
        centerlines[vid] = centerline_from_dict(rec["centerline"], f"vessels[{i}].centerline")
    labels = read_volume(src / "truth_masks.json").voxels.astype(np.uint8)
    return GroundTruth(boxes, read_contours(src / "truth_contours.json"), labels, centerlines,
                       [int(t) for t in meta["targets"]], [int(z) for z in meta["dropouts"]])


def read_spec(path) -> PhantomSpec:
    rec = read_json(path)
    if not isinstance(rec, dict):
        raise FormatError("phantom", "expected a JSON object")
    return PhantomSpec.from_dict(rec)
