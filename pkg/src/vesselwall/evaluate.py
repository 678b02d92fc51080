"""Localization and segmentation metrics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .io import BoundingBox
from .tracklet import iou


@dataclass
class LocalizationRow:
    slice: int
    label: int
    iou: float
    matched: bool


@dataclass
class LocalizationReport:
    mean_iou: float
    missed: int
    false_positive: int
    per_slice: list[LocalizationRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SegmentationRow:
    slice: int
    vessel: int
    dsc: float
    area_pred: float
    area_true: float
    empty: bool = False


@dataclass
class SegmentationReport:
    mean_dsc: float
    area_correlation: float
    per_slice: list[SegmentationRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _overlaps(a: BoundingBox, b: BoundingBox) -> bool:
    return (min(a.x + a.w, b.x + b.w) > max(a.x, b.x)
            and min(a.y + a.h, b.y + b.h) > max(a.y, b.y))


def localization_report(dets: Sequence[BoundingBox],
                        labels: Sequence[BoundingBox]) -> LocalizationReport:
    """Best same-slice IoU per label, averaged over labels.

    A label is missed and a detection false when it overlaps nothing on its
    slice (any positive-area intersection counts as overlap).
    """
    if len(labels) == 0:
        raise ValueError("no labels to evaluate against")
    det_by_slice = defaultdict(list)
    lab_by_slice = defaultdict(list)
    for d in dets:
        det_by_slice[d.slice].append(d)
    for b in labels:
        lab_by_slice[b.slice].append(b)
    rows = []
    missed = 0
    for i, lab in enumerate(labels):
        cands = det_by_slice[lab.slice]
        best = max((iou(lab, d) for d in cands), default=0.0)
        hit = any(_overlaps(lab, d) for d in cands)
        missed += not hit
        rows.append(LocalizationRow(lab.slice, i, best, hit))
    false = sum(1 for d in dets if not any(_overlaps(d, b) for b in lab_by_slice[d.slice]))
    mean = math.fsum(r.iou for r in rows) / len(rows)
    return LocalizationReport(mean, missed, false, rows)


def dice(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Dice coefficient and whether both masks were empty (scored as 1)."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0, True
    return 2.0 * int(np.count_nonzero(a & b)) / total, False


def wall_area(mask: np.ndarray, spacing: tuple[float, float]) -> float:
    if not (spacing[0] > 0 and spacing[1] > 0):
        raise ValueError(f"spacing must be positive, got {spacing}")
    return int(np.count_nonzero(mask)) * spacing[0] * spacing[1]


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d sequences of equal length")
    if len(x) < 2:
        raise ValueError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise ValueError("pearson is undefined for zero variance")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def segmentation_report(pairs, spacing: tuple[float, float]) -> SegmentationReport:
    """``pairs`` yields ``(slice, vessel, predicted_mask, true_mask)``."""
    rows = []
    for z, vessel, pred, true in pairs:
        d, empty = dice(pred, true)
        rows.append(SegmentationRow(int(z), int(vessel), d, wall_area(pred, spacing),
                                    wall_area(true, spacing), empty))
    if not rows:
        raise ValueError("no slices to evaluate")
    mean = math.fsum(r.dsc for r in rows) / len(rows)
    try:
        corr = pearson([r.area_pred for r in rows], [r.area_true for r in rows])
    except ValueError:
        corr = float("nan")
    return SegmentationReport(mean, corr, rows)


def match_vessels(pred_labels: np.ndarray, true_labels: np.ndarray,
                  targets: Sequence[int]) -> dict[int, int]:
    """Map each predicted vessel id to the target it overlaps most (ties to
    the lower id); predictions overlapping no target are left out."""
    out = {}
    for p in np.unique(pred_labels[pred_labels > 0]).astype(int) - 1:
        pm = pred_labels == p + 1
        best, best_n = None, 0
        for t in sorted(targets):
            n = int(np.count_nonzero(pm & (true_labels == t + 1)))
            if n > best_n:
                best, best_n = t, n
        if best is not None:
            out[int(p)] = best
    return out


def compare_label_volumes(pred_labels: np.ndarray, true_labels: np.ndarray,
                          targets: Sequence[int], spacing: tuple[float, float],
                          skip_slices: Sequence[int] = ()) -> SegmentationReport:
    """Per-slice Dice of every target's true wall against the union of the
    predictions matched to it.  Slices in ``skip_slices`` are not scored."""
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    if pred_labels.shape != true_labels.shape:
        raise ValueError(f"shape mismatch: {pred_labels.shape} vs {true_labels.shape}")
    match = match_vessels(pred_labels, true_labels, targets)
    skip = set(int(z) for z in skip_slices)

    def pairs():
        for t in sorted(targets):
            ids = [p + 1 for p, tt in match.items() if tt == t]
            for z in range(true_labels.shape[0]):
                truth = true_labels[z] == t + 1
                if z in skip or not truth.any():
                    continue
                yield z, t, np.isin(pred_labels[z], ids), truth

    return segmentation_report(pairs(), spacing)
