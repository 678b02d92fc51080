"""Per-slice artery candidates.

The pipeline only needs boxes with comparable scores, so any detector can be
plugged in.  :class:`BlobDetector` is the classical reference backend and
:class:`FileDetector` ingests boxes produced elsewhere (e.g. a neural net).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import ndimage

from .io import BoundingBox, Volume, read_detections

_EIGHT = np.ones((3, 3), dtype=bool)


def detect_slice(img: np.ndarray, z: int, threshold: float, min_area: float,
                 max_area: float) -> list[BoundingBox]:
    peak = float(np.max(img))
    if not peak > 0:
        return []
    norm = img / peak
    labels, n = ndimage.label(norm >= threshold, structure=_EIGHT)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(norm), labels, idx)
    means = ndimage.mean(norm, labels, idx)
    boxes = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        area = areas[lab - 1]
        if sl is None or not (min_area <= area <= max_area):
            continue
        ys, xs = sl
        score = min(max(float(means[lab - 1]), 0.0), 1.0)
        boxes.append(BoundingBox(z, xs.start, ys.start, xs.stop - xs.start,
                                 ys.stop - ys.start, score))
    return boxes


def detect_blobs(v: Volume, threshold: float = 0.7, min_area: float = 15,
                 max_area: float = 3000, workers: int = 1) -> list[BoundingBox]:
    """Threshold each slice at ``threshold * slice max`` and box the
    8-connected components whose pixel area lies in ``[min_area, max_area]``.

    Scores are the component's mean intensity divided by the slice max,
    clamped to [0, 1].  Output is ordered by slice, then label order.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if not 0 < min_area < max_area:
        raise ValueError(f"need 0 < min_area < max_area, got {min_area}, {max_area}")

    def run(z):
        return detect_slice(v.voxels[z].astype(np.float64), z, threshold, min_area, max_area)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_slice = list(pool.map(run, range(v.depth)))
    else:
        per_slice = [run(z) for z in range(v.depth)]
    return [b for boxes in per_slice for b in boxes]


def file_detector(path) -> list[BoundingBox]:
    return read_detections(path)


class BlobDetector:
    name = "blobs"

    def __init__(self, threshold=0.7, min_area=15, max_area=3000):
        self.threshold = threshold
        self.min_area = min_area
        self.max_area = max_area

    def __call__(self, v: Volume, workers: int = 1) -> list[BoundingBox]:
        return detect_blobs(v, self.threshold, self.min_area, self.max_area, workers)


class FileDetector:
    name = "file"

    def __init__(self, path):
        self.path = path

    def __call__(self, v: Volume | None = None, workers: int = 1) -> list[BoundingBox]:
        return file_detector(self.path)
