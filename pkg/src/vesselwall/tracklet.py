"""Tracking-by-detection along the slice axis.

Boxes on neighbouring slices are chained into tracklets by overlap, tracklets
are joined across missed slices when they are each other's cheapest partner,
and the highest-scoring chains are kept as the arteries of interest.
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .io import BoundingBox, FormatError, Volume, box_from_dict, box_to_dict
from .polar import CartesianPatchStack


@dataclass
class Tracklet:
    boxes: list[BoundingBox]

    def __post_init__(self):
        self.boxes = sorted(self.boxes, key=lambda b: b.slice)
        slices = [b.slice for b in self.boxes]
        if not slices:
            raise ValueError("a tracklet needs at least one box")
        if len(set(slices)) != len(slices):
            raise ValueError("a tracklet holds at most one box per slice")

    @property
    def z_start(self) -> int:
        return self.boxes[0].slice

    @property
    def z_end(self) -> int:
        return self.boxes[-1].slice

    @property
    def span(self) -> int:
        return self.z_end - self.z_start + 1

    @property
    def total_score(self) -> float:
        return math.fsum(b.score for b in self.boxes if not b.interpolated)

    @property
    def has_gaps(self) -> bool:
        return len(self.boxes) != self.span

    def box_at(self, z: int) -> BoundingBox | None:
        for b in self.boxes:
            if b.slice == z:
                return b
        return None


@dataclass(frozen=True)
class ConnectionLoss:
    l1: float
    l2: float
    l3: float
    total: float


@dataclass
class Centerline:
    z_start: int
    points: np.ndarray  # (n, 2) of (x, y)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    @property
    def z_end(self) -> int:
        return self.z_start + len(self.points) - 1

    @property
    def slices(self) -> range:
        return range(self.z_start, self.z_end + 1)

    def point(self, z: int) -> tuple[float, float]:
        x, y = self.points[z - self.z_start]
        return float(x), float(y)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def build_tracklets(dets: Sequence[BoundingBox], tau_link: float = 0.3) -> list[Tracklet]:
    """Greedy slice-by-slice linking.

    Candidate links between tracklets ending on slice ``z`` and boxes on
    ``z + 1`` with IoU >= ``tau_link`` are taken in order of decreasing IoU,
    then larger accumulated score, then earlier-created tracklet, then input
    order of the box.  Boxes left over start new tracklets.
    """
    if not 0 < tau_link < 1:
        raise ValueError(f"tau_link must lie in (0, 1), got {tau_link}")
    by_slice = defaultdict(list)
    for b in dets:
        by_slice[b.slice].append(b)
    chains: list[list[BoundingBox]] = []
    scores: list[float] = []
    for z in sorted(by_slice):
        boxes = by_slice[z]
        links = []
        for ti, chain in enumerate(chains):
            last = chain[-1]
            if last.slice != z - 1:
                continue
            for bi, b in enumerate(boxes):
                v = iou(last, b)
                if v >= tau_link:
                    links.append((-v, -scores[ti], ti, bi))
        links.sort()
        used_t, used_b = set(), set()
        for _, _, ti, bi in links:
            if ti in used_t or bi in used_b:
                continue
            used_t.add(ti)
            used_b.add(bi)
            chains[ti].append(boxes[bi])
            scores[ti] += boxes[bi].score
        for bi, b in enumerate(boxes):
            if bi not in used_b:
                chains.append([b])
                scores.append(b.score)
    return [Tracklet(c) for c in chains]


def connection_loss(a: Tracklet, b: Tracklet, weights=(0.2, 1.0, 1.0)) -> ConnectionLoss:
    if a.z_end >= b.z_start:
        raise ValueError(
            f"tracklet ending at slice {a.z_end} cannot precede one starting at {b.z_start}")
    w1, w2, w3 = weights
    last, first = a.boxes[-1], b.boxes[0]
    l1 = float(b.z_start - a.z_end - 1)
    l2 = 1.0 - iou(last, first)
    l3 = abs(math.log(first.w / last.w)) + abs(math.log(first.h / last.h))
    return ConnectionLoss(l1, l2, l3, w1 * l1 + w2 * l2 + w3 * l3)


def interpolate_gaps(t: Tracklet) -> Tracklet:
    """Fill missing slices with linearly interpolated, zero-score boxes."""
    out = [t.boxes[0]]
    for lo, hi in zip(t.boxes, t.boxes[1:]):
        gap = hi.slice - lo.slice
        (cx0, cy0), (cx1, cy1) = lo.center, hi.center
        for step in range(1, gap):
            f = step / gap
            w = lo.w + (hi.w - lo.w) * f
            h = lo.h + (hi.h - lo.h) * f
            cx = cx0 + (cx1 - cx0) * f
            cy = cy0 + (cy1 - cy0) * f
            out.append(BoundingBox(lo.slice + step, cx - w / 2, cy - h / 2, w, h,
                                   score=0.0, interpolated=True))
        out.append(hi)
    return Tracklet(out)


def _mutual_pairs(ts, weights, max_gap, loss_max):
    best_succ: dict[int, tuple] = {}
    best_pred: dict[int, tuple] = {}
    for i, a in enumerate(ts):
        for j, b in enumerate(ts):
            if a.z_end >= b.z_start:
                continue
            gap = b.z_start - a.z_end - 1
            if gap > max_gap:
                continue
            total = connection_loss(a, b, weights).total
            if total > loss_max:
                continue
            ks = (total, gap, b.z_start, j)
            if i not in best_succ or ks < best_succ[i]:
                best_succ[i] = ks
            kp = (total, gap, a.z_start, i)
            if j not in best_pred or kp < best_pred[j]:
                best_pred[j] = kp
    return {i: k[3] for i, k in best_succ.items() if best_pred[k[3]][3] == i}


def merge_tracklets(ts: Sequence[Tracklet], weights=(0.2, 1.0, 1.0), max_gap: int = 5,
                    loss_max: float = 2.0) -> list[Tracklet]:
    """Join tracklets that are each other's minimum-loss partner, in rounds.

    In every round each tracklet picks its cheapest admissible successor
    (gap <= ``max_gap``, loss <= ``loss_max``) and predecessor; every mutual
    pair is joined and the missing slices interpolated.  Ties go to the
    smaller gap, then the lower slice index, then list position.  Rounds
    repeat until nothing is joined.
    """
    ts = list(ts)
    while True:
        nxt = _mutual_pairs(ts, weights, max_gap, loss_max)
        if not nxt:
            return ts
        heads = set(range(len(ts))) - set(nxt.values())
        merged = []
        for i in range(len(ts)):
            if i not in heads:
                continue
            boxes = list(ts[i].boxes)
            j = i
            while j in nxt:
                j = nxt[j]
                boxes.extend(ts[j].boxes)
            merged.append(interpolate_gaps(Tracklet(boxes)))
        ts = merged


def select_targets(ts: Sequence[Tracklet], k: int = 2) -> list[Tracklet]:
    """Keep the ``k`` best tracklets (score, then span, then earliest start)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    order = sorted(range(len(ts)),
                   key=lambda i: (-ts[i].total_score, -ts[i].span, ts[i].z_start, i))
    if len(ts) < k:
        warnings.warn(f"only {len(ts)} tracklet(s) available for {k} targets", stacklevel=2)
    return [ts[i] for i in order[:k]]


def extract_centerline(t: Tracklet) -> Centerline:
    if t.has_gaps:
        raise ValueError("tracklet has missing slices; interpolate_gaps first")
    return Centerline(t.z_start, [b.center for b in t.boxes])


def crop_origin(center: tuple[float, float], size: int = 128) -> tuple[int, int]:
    cx, cy = center
    return (int(math.floor(cx + 0.5)) - size // 2, int(math.floor(cy + 0.5)) - size // 2)


def crop_stack(v: Volume, center: tuple[float, float], z: int, size: int = 128,
               n_slices: int = 3) -> CartesianPatchStack:
    """Zero-padded ``size x size`` crops of slices around ``z``; edge slices
    repeat the nearest existing one."""
    if n_slices not in (1, 3):
        raise ValueError(f"n_slices must be 1 or 3, got {n_slices}")
    x0, y0 = crop_origin(center, size)
    half = n_slices // 2
    zs = [min(max(zz, 0), v.depth - 1) for zz in range(z - half, z + half + 1)]
    planes = np.zeros((n_slices, size, size), dtype=np.float64)
    sx0, sx1 = max(x0, 0), min(x0 + size, v.width)
    sy0, sy1 = max(y0, 0), min(y0 + size, v.height)
    if sx0 < sx1 and sy0 < sy1:
        for i, zz in enumerate(zs):
            planes[i, sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = v.voxels[zz, sy0:sy1, sx0:sx1]
    return CartesianPatchStack(planes, (x0, y0, z), 1)


def crop_patches(v: Volume, c: Centerline, size: int = 128,
                 n_slices: int = 3) -> list[CartesianPatchStack]:
    if c.z_start < 0 or c.z_end >= v.depth:
        raise ValueError(f"centerline slices {c.z_start}..{c.z_end} outside volume")
    return [crop_stack(v, c.point(z), z, size, n_slices) for z in c.slices]


# -- serialization --------------------------------------------------------------

def tracklet_to_dict(t: Tracklet, ident: int = 0) -> dict:
    return {"id": ident, "z_start": t.z_start, "z_end": t.z_end,
            "total_score": t.total_score, "boxes": [box_to_dict(b) for b in t.boxes]}


def tracklet_from_dict(rec: dict, where: str = "tracklet") -> Tracklet:
    if not isinstance(rec, dict) or "boxes" not in rec:
        raise FormatError(where, "expected an object with 'boxes'")
    return Tracklet([box_from_dict(b, f"{where}.boxes[{i}]") for i, b in enumerate(rec["boxes"])])


def centerline_to_dict(c: Centerline, ident: int = 0) -> dict:
    return {"id": ident, "z_start": c.z_start, "points": c.points.tolist()}


def centerline_from_dict(rec: dict, where: str = "centerline") -> Centerline:
    if not isinstance(rec, dict):
        raise FormatError(where, "expected an object")
    z0 = rec.get("z_start")
    if not isinstance(z0, int) or isinstance(z0, bool) or z0 < 0:
        raise FormatError(f"{where}.z_start", f"expected a non-negative integer, got {z0!r}")
    pts = np.asarray(rec.get("points", []), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0 or not np.all(np.isfinite(pts)):
        raise FormatError(f"{where}.points", "expected a non-empty list of finite (x, y) pairs")
    return Centerline(z0, pts)
