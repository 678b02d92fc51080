"""Polar vessel wall segmentation of one slice.

A backend turns each 40-row angular window into wall probabilities; the
merged map gives lumen/outer contours at the steepest rise/fall along the
radius, a periodic snake smooths them, and the ring between them is the wall.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import _kernels
from .io import ContourSet, Volume
from .polar import (CENTER, DEG_PER_ROW, N_RHO, N_THETA, SCALE, WindowSet, downsample_mask,
                    from_polar, to_polar, upsample_stack, window_merge, window_split)
from .tracklet import crop_stack

LUMEN = "lumen"
OUTER = "outer"


@dataclass
class PolarContour:
    rho: np.ndarray
    role: str
    flags: np.ndarray = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.rho.shape != (N_THETA,):
            raise ValueError(f"expected {N_THETA} radii, got shape {self.rho.shape}")
        if self.role not in (LUMEN, OUTER):
            raise ValueError(f"role must be 'lumen' or 'outer', got {self.role!r}")
        if self.flags is None:
            self.flags = np.zeros(N_THETA, dtype=bool)
        else:
            self.flags = np.asarray(self.flags, dtype=bool).copy()


# -- backends -----------------------------------------------------------------------

class SegmenterBackend:
    """Maps a ``(n_slices, 40, 256)`` polar window to ``(40, 256)`` probabilities."""

    name = "base"
    n_slices = 3

    def predict_window(self, window: np.ndarray, offset: int) -> np.ndarray:
        raise NotImplementedError


def oracle_probability(window: np.ndarray, smooth_sigma: float = 2.0) -> np.ndarray:
    """Smooth along the radius, then min-max normalize the center plane.

    A constant window has no contrast to normalize and maps to 0.5.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 2:
        window = window[None]
    center = window[window.shape[0] // 2]
    if smooth_sigma > 0:
        center = gaussian_filter1d(center, smooth_sigma, axis=-1, mode="nearest")
    lo, hi = float(center.min()), float(center.max())
    if not hi > lo:
        return np.full(center.shape, 0.5)
    return (center - lo) / (hi - lo)


class OracleSegmenter(SegmenterBackend):
    """Deterministic stand-in for a trained network on bright-wall images."""

    name = "oracle"

    def __init__(self, smooth_sigma: float = 2.0, n_slices: int = 3):
        self.smooth_sigma = smooth_sigma
        self.n_slices = n_slices

    def predict_window(self, window, offset):
        return oracle_probability(window, self.smooth_sigma)


class PrecomputedSegmenter(SegmenterBackend):
    """Replays stored per-window predictions, shaped ``(n_windows, 40, 256)``."""

    name = "precomputed"

    def __init__(self, window_preds: np.ndarray, stride: int, n_slices: int = 3):
        self.window_preds = np.asarray(window_preds, dtype=np.float64)
        self.stride = stride
        self.n_slices = n_slices

    def predict_window(self, window, offset):
        return self.window_preds[offset // self.stride]


def predict(backend: SegmenterBackend, ws: WindowSet) -> np.ndarray:
    """Run ``backend`` on every window and average the overlaps."""
    if ws.windows.shape[1] != backend.n_slices:
        raise ValueError(
            f"backend {backend.name!r} takes {backend.n_slices} plane(s), "
            f"windows have {ws.windows.shape[1]}")
    preds = []
    for window, off in zip(ws.windows, ws.offsets):
        pred = np.asarray(backend.predict_window(window, int(off)), dtype=np.float64)
        if pred.shape != window.shape[1:]:
            raise ValueError(f"backend returned {pred.shape}, expected {window.shape[1:]}")
        preds.append(pred)
    preds = np.stack(preds)
    if preds.min() < 0.0 or preds.max() > 1.0:
        warnings.warn(f"backend {backend.name!r} produced values outside [0, 1]; clamped",
                      stacklevel=2)
        preds = np.clip(preds, 0.0, 1.0)
    return window_merge(preds, ws.offsets, ws.stride)


# -- contours -----------------------------------------------------------------------

def radial_gradient(m: np.ndarray) -> np.ndarray:
    """Central difference along the radius with replicated borders."""
    m = np.asarray(m, dtype=np.float64)
    padded = np.pad(m, ((0, 0), (1, 1)), mode="edge")
    return (padded[:, 2:] - padded[:, :-2]) / 2.0


def init_contours(m: np.ndarray) -> tuple[PolarContour, PolarContour]:
    """Lumen at the steepest rise, outer at the steepest fall beyond it.

    Ties go to the smaller radius for the lumen and the larger for the outer
    wall.  Rows without a rise or a fall, or with the rise in the last column,
    are flagged.
    """
    g = radial_gradient(m)
    n_theta, n_rho = g.shape
    lumen = np.argmax(g, axis=1)
    outer = np.full(n_theta, n_rho - 1)
    flags = np.zeros(n_theta, dtype=bool)
    for k in range(n_theta):
        lo = lumen[k]
        if g[k, lo] <= 0:
            flags[k] = True
        if lo >= n_rho - 1:
            flags[k] = True
            continue
        tail = g[k, lo + 1:]
        rev = int(np.argmin(tail[::-1]))
        outer[k] = n_rho - 1 - rev
        if tail[-1 - rev] >= 0:
            flags[k] = True
    return (PolarContour(lumen.astype(np.float64), LUMEN, flags),
            PolarContour(outer.astype(np.float64), OUTER, flags))


def snake_refine(c: PolarContour, m: np.ndarray, alpha: float = 0.1, beta: float = 0.1,
                 gamma: float = 1.0, max_iter: int = 100) -> PolarContour:
    """Smooth a radius contour against the radial gradient of ``m``.

    Minimizes elastic + stiffness + image energy over the periodic radius
    function by per-node moves of +-0.5 / +-1, keeping only moves that lower
    the energy.  The lumen is attracted to high gradient, the outer wall to
    low gradient.
    """
    rho, _ = snake_trace(c, m, alpha, beta, gamma, max_iter)
    return PolarContour(rho, c.role, c.flags)


def snake_trace(c: PolarContour, m: np.ndarray, alpha=0.1, beta=0.1, gamma=1.0,
                max_iter=100) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`snake_refine` but returns ``(rho, energy_per_sweep)``."""
    if min(alpha, beta, gamma) < 0:
        raise ValueError("snake weights must be >= 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    sign = -1.0 if c.role == LUMEN else 1.0
    g = radial_gradient(m)
    start = np.clip(c.rho, 0.0, g.shape[1] - 1.0)
    rho, energies = _kernels.snake_descend(start, g, sign, alpha, beta, gamma, max_iter)
    return np.clip(rho, 0.0, g.shape[1] - 1.0), energies


def contour_energy(c: PolarContour, m: np.ndarray, alpha=0.1, beta=0.1, gamma=1.0) -> float:
    sign = -1.0 if c.role == LUMEN else 1.0
    return _kernels.snake_energy(c.rho, radial_gradient(m), sign, alpha, beta, gamma)


def enforce_pairing(lumen: PolarContour, outer: PolarContour) -> tuple[PolarContour, PolarContour]:
    """Lift the outer wall to ``lumen + 1`` wherever it is not outside the lumen."""
    lo = np.minimum(lumen.rho, N_RHO - 2.0)
    hi = outer.rho.copy()
    bad = hi <= lo
    hi[bad] = lo[bad] + 1.0
    lumen_flags = lumen.flags | (lo != lumen.rho)
    return (PolarContour(lo, LUMEN, lumen_flags),
            PolarContour(hi, OUTER, outer.flags | bad))


def wall_mask(lumen: PolarContour, outer: PolarContour) -> np.ndarray:
    rho = np.arange(N_RHO)[None, :]
    return (rho >= lumen.rho[:, None]) & (rho <= outer.rho[:, None])


def seg_confidence(p: np.ndarray, mask: np.ndarray) -> float:
    """Probability summed with +1 on the wall and -1 elsewhere, divided by
    the number of wall pixels.  Equals 1 when ``p`` is the mask's indicator."""
    p = np.asarray(p, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if p.shape != mask.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {mask.shape}")
    n_wall = int(mask.sum())
    if n_wall == 0:
        raise ValueError("segmentation mask is empty")
    signed = np.where(mask, 1.0, -1.0)
    return float(np.sum(p * signed) / n_wall)


def contour_polygon(c: PolarContour, crop_origin=(0, 0), scale: int = SCALE) -> np.ndarray:
    ang = np.deg2rad(np.arange(N_THETA) * DEG_PER_ROW)
    x = (CENTER + c.rho * np.cos(ang)) / scale + crop_origin[0]
    y = (CENTER + c.rho * np.sin(ang)) / scale + crop_origin[1]
    return np.column_stack([x, y])


def restore_cartesian(lumen: PolarContour, outer: PolarContour, crop_origin,
                      scale: int = SCALE, confidence: float = float("nan"),
                      slice_index: int | None = None, vessel: int = 0) -> ContourSet:
    """Polygons in original-volume pixels, one vertex per 2 degrees."""
    if slice_index is None:
        slice_index = crop_origin[2] if len(crop_origin) > 2 else 0
    return ContourSet(slice_index, contour_polygon(lumen, crop_origin, scale),
                      contour_polygon(outer, crop_origin, scale), confidence, vessel)


def restore_mask(polar_mask: np.ndarray) -> np.ndarray:
    """Polar wall mask -> boolean mask of the original-resolution patch."""
    return downsample_mask(from_polar(polar_mask.astype(np.float64), binary=True), SCALE)


# -- one slice -------------------------------------------------------------------

@dataclass
class SegmentParams:
    n_slices: int = 3
    patch_size: int = 128
    window_height: int = 40
    window_stride: int = 20
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 1.0
    max_iter: int = 100
    # a slice counts as failed when more rows than this fraction are degenerate
    max_degenerate_fraction: float = 0.5


@dataclass
class SliceResult:
    slice: int
    center: tuple[float, float]
    crop_origin: tuple[int, int, int]
    prob: np.ndarray
    lumen: PolarContour
    outer: PolarContour
    polar_mask: np.ndarray
    confidence: float
    failed: bool
    flags: list[str] = field(default_factory=list)

    def contour_set(self, vessel: int = 0) -> ContourSet:
        return restore_cartesian(self.lumen, self.outer, self.crop_origin,
                                 confidence=self.confidence, slice_index=self.slice,
                                 vessel=vessel)

    def patch_mask(self) -> np.ndarray:
        return restore_mask(self.polar_mask)


class Segmenter:
    """Configured segmentation stage: crop, upsample, polar, predict, contour."""

    def __init__(self, backend: SegmenterBackend, params: SegmentParams | None = None):
        self.backend = backend
        self.params = params or SegmentParams()
        if self.backend.n_slices != self.params.n_slices:
            raise ValueError("backend and parameters disagree on n_slices")

    def probability(self, v: Volume, z: int, center) -> tuple[np.ndarray, tuple[int, int, int]]:
        p = self.params
        stack = upsample_stack(crop_stack(v, center, z, p.patch_size, p.n_slices))
        polar = to_polar(stack.planes)
        ws = window_split(polar, p.window_height, p.window_stride)
        return predict(self.backend, ws), stack.crop_origin

    def segment(self, v: Volume, z: int, center) -> SliceResult:
        p = self.params
        prob, origin = self.probability(v, z, center)
        lumen0, outer0 = init_contours(prob)
        flags = []
        degenerate = float(lumen0.flags.mean())
        if degenerate > 0:
            flags.append("degenerate_rows")
        failed = degenerate > p.max_degenerate_fraction
        lumen = snake_refine(lumen0, prob, p.alpha, p.beta, p.gamma, p.max_iter)
        outer = snake_refine(outer0, prob, p.alpha, p.beta, p.gamma, p.max_iter)
        if np.any(outer.rho <= lumen.rho):
            flags.append("pairing_fixed")
        lumen, outer = enforce_pairing(lumen, outer)
        mask = wall_mask(lumen, outer)
        conf = seg_confidence(prob, mask)
        return SliceResult(z, (float(center[0]), float(center[1])), origin, prob, lumen,
                           outer, mask, conf, failed, flags)
