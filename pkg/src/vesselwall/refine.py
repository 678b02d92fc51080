"""Iterative centerline re-centering from lumen asymmetry."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .io import ContourSet, Volume
from .polar import SCALE
from .segment import PolarContour, Segmenter, SliceResult
from .tracklet import Centerline


@dataclass(frozen=True)
class CenterDeviation:
    dx: float
    dy: float
    slice: int = 0


def center_deviation(lumen: PolarContour, slice_index: int = 0) -> CenterDeviation:
    """Offset of the lumen center from the patch center, in upsampled pixels.

    Opposite radii of a circle centered at ``(a, b)`` differ by ``2a`` along x
    and ``2b`` along y, so half the difference is the center itself: a
    positive ``dx`` means the lumen lies toward +x.
    """
    rho = lumen.rho
    return CenterDeviation((rho[0] - rho[90]) / 2.0, (rho[45] - rho[135]) / 2.0, slice_index)


@dataclass
class RefineRow:
    slice: int
    rounds: int
    dx: float
    dy: float
    converged: bool
    confidence: float
    failed: bool = False
    clamped: bool = False

    def to_dict(self):
        return asdict(self)


@dataclass
class RefineResult:
    centerline: Centerline
    slices: list[SliceResult]
    rows: list[RefineRow] = field(default_factory=list)

    def contours(self, vessel: int = 0) -> list[ContourSet]:
        return [r.contour_set(vessel) for r in self.slices]

    @property
    def confidences(self) -> list[float]:
        return [r.confidence for r in self.slices]


def refine_point(v: Volume, z: int, point, seg: Segmenter, threshold: float = 4.0,
                 max_iter: int = 10) -> tuple[tuple[float, float], SliceResult, RefineRow]:
    """Segment, measure the lumen offset, shift; repeat until it is small."""
    x, y = float(point[0]), float(point[1])
    clamped = False
    converged = False
    result = None
    dev = CenterDeviation(float("nan"), float("nan"), z)
    rounds = 0
    for rounds in range(1, max_iter + 1):
        result = seg.segment(v, z, (x, y))
        if result.failed:
            x, y = float(point[0]), float(point[1])
            clamped = False
            break
        dev = center_deviation(result.lumen, z)
        if abs(dev.dx) < threshold and abs(dev.dy) < threshold:
            converged = True
            break
        nx = x + dev.dx / SCALE
        ny = y + dev.dy / SCALE
        cx = min(max(nx, 0.0), float(v.width))
        cy = min(max(ny, 0.0), float(v.height))
        clamped |= bool(cx != nx or cy != ny)
        x, y = cx, cy
    if not converged:
        result.flags.append("failed" if result.failed else "not_converged")
    if clamped:
        result.flags.append("clamped")
    row = RefineRow(z, rounds, float(dev.dx), float(dev.dy), converged, result.confidence,
                    result.failed, clamped)
    return (x, y), result, row


def refine_centerline(v: Volume, c: Centerline, seg: Segmenter, threshold: float = 4.0,
                      max_iter: int = 10, workers: int = 1) -> RefineResult:
    """Refine every centerline point independently.

    Args:
        v: the volume.
        c: initial centerline, one point per slice.
        seg: configured segmentation stage.
        threshold: stop once both deviations are below this, in upsampled pixels.
        max_iter: maximum segmentation rounds per slice.
        workers: thread count; results do not depend on it.

    Returns:
        The shifted centerline with the last segmentation and a report row per slice.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    if c.z_start < 0 or c.z_end >= v.depth:
        raise ValueError(f"centerline slices {c.z_start}..{c.z_end} outside volume")

    def run(z):
        return refine_point(v, z, c.point(z), seg, threshold, max_iter)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(run, c.slices))
    else:
        out = [run(z) for z in c.slices]
    pts = np.array([p for p, _, _ in out], dtype=np.float64).reshape(-1, 2)
    return RefineResult(Centerline(c.z_start, pts), [r for _, r, _ in out],
                        [row for _, _, row in out])
