"""Stage orchestration: detect -> track -> segment -> refine, plus outputs."""

from __future__ import annotations

import contextlib
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig
from .detect import detect_blobs, file_detector
from .evaluate import compare_label_volumes, localization_report
from .io import (BoundingBox, FormatError, Volume, read_json, write_contours, write_detections,
                 write_json, write_volume)
from .refine import RefineResult, RefineRow, refine_centerline
from .segment import OracleSegmenter, SegmentParams, Segmenter, SliceResult
from .tracklet import (Centerline, Tracklet, build_tracklets, centerline_from_dict,
                       centerline_to_dict, extract_centerline, interpolate_gaps,
                       merge_tracklets, select_targets, tracklet_to_dict)


class InputError(Exception):
    """Missing or malformed input; exit status 1."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"{stage}: {msg}")
        self.stage = stage


class StageError(Exception):
    """A stage could not produce its output; exit status 2."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"{stage}: {msg}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    """Attribute any failure inside the block to stage ``name``."""
    try:
        yield
    except (InputError, StageError):
        raise
    except (FileNotFoundError, IsADirectoryError, FormatError, ConfigError) as exc:
        raise InputError(name, str(exc)) from exc
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


def make_segmenter(cfg: PipelineConfig) -> Segmenter:
    params = SegmentParams(n_slices=cfg.n_slices, patch_size=cfg.patch_size,
                           window_height=cfg.window_height, window_stride=cfg.window_stride,
                           alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma,
                           max_iter=cfg.snake_max_iter)
    return Segmenter(OracleSegmenter(cfg.smooth_sigma, cfg.n_slices), params)


def run_detect(v: Volume, cfg: PipelineConfig) -> list[BoundingBox]:
    if cfg.detector == "file":
        return file_detector(cfg.detections_path)
    return detect_blobs(v, cfg.detect_threshold, cfg.detect_min_area, cfg.detect_max_area,
                        cfg.workers)


def run_track(dets, cfg: PipelineConfig) -> list[Tracklet]:
    """Link, merge, keep the top ``k_targets``; the result has no gaps."""
    if not dets:
        raise StageError("track", "no tracklets: the detection set is empty")
    ts = build_tracklets(dets, cfg.tau_link)
    ts = merge_tracklets(ts, cfg.loss_weights, cfg.max_gap, cfg.loss_max)
    return [interpolate_gaps(t) for t in select_targets(ts, cfg.k_targets)]


def segment_centerline(v: Volume, c: Centerline, seg: Segmenter,
                       workers: int = 1) -> list[SliceResult]:
    """One segmentation per centerline point, without re-centering."""
    def run(z):
        r = seg.segment(v, z, c.point(z))
        if r.failed:
            r.flags.append("failed")
        return r

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, c.slices))
    return [run(z) for z in c.slices]


def label_volume(v: Volume, per_vessel: list[list[SliceResult]]) -> np.ndarray:
    """Paste restored patch masks into a ``[z, y, x]`` label volume
    (0 background, ``vessel + 1`` wall); earlier vessels win overlaps."""
    labels = np.zeros((v.depth, v.height, v.width), dtype=np.float32)
    for vid, results in enumerate(per_vessel):
        for r in results:
            m = r.patch_mask()
            x0, y0, _ = r.crop_origin
            n = m.shape[0]
            sx0, sx1 = max(x0, 0), min(x0 + n, v.width)
            sy0, sy1 = max(y0, 0), min(y0 + n, v.height)
            if sx0 >= sx1 or sy0 >= sy1:
                continue
            sub = m[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0]
            dst = labels[r.slice, sy0:sy1, sx0:sx1]
            dst[sub & (dst == 0)] = vid + 1
    return labels


@dataclass
class RunResult:
    volume: Volume
    config: PipelineConfig
    detections: list[BoundingBox] = field(default_factory=list)
    tracklets: list[Tracklet] = field(default_factory=list)
    centerlines: list[Centerline] = field(default_factory=list)
    refined: list[RefineResult] = field(default_factory=list)
    segmented: list[list[SliceResult]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def slice_results(self) -> list[list[SliceResult]]:
        if self.refined:
            return [r.slices for r in self.refined]
        return self.segmented

    @property
    def target_boxes(self) -> list[BoundingBox]:
        return sorted((b for t in self.tracklets for b in t.boxes), key=lambda b: b.slice)

    def labels(self) -> np.ndarray:
        return label_volume(self.volume, self.slice_results)

    def report(self) -> dict:
        floor = self.config.segconf_floor
        vessels, low, unconverged, failed = [], [], [], []
        for vid, results in enumerate(self.slice_results):
            rows = self.refined[vid].rows if self.refined else [None] * len(results)
            per_slice = []
            for r, row in zip(results, rows):
                rec = {"slice": r.slice, "segconf": r.confidence, "failed": r.failed,
                       "flags": sorted(set(r.flags))}
                if isinstance(row, RefineRow):
                    rec.update(rounds=row.rounds, dx=_finite(row.dx), dy=_finite(row.dy),
                               converged=row.converged, clamped=row.clamped)
                    if not row.converged and not row.failed:
                        unconverged.append([vid, r.slice])
                if r.confidence < floor:
                    low.append([vid, r.slice, r.confidence])
                if r.failed:
                    failed.append([vid, r.slice])
                per_slice.append(rec)
            vessels.append({"id": vid, "z_start": results[0].slice if results else None,
                            "z_end": results[-1].slice if results else None,
                            "slices": per_slice})
        v = self.volume
        return {
            "volume": {"width": v.width, "height": v.height, "depth": v.depth,
                       "spacing": list(v.spacing)},
            # worker count is left out: it must not change any output byte
            "config": {k: val for k, val in self.config.to_dict().items() if k != "workers"},
            "n_detections": len(self.detections),
            "n_targets": len(self.slice_results),
            "vessels": vessels,
            "flags": {"segconf_floor": floor, "low_confidence": low,
                      "not_converged": unconverged, "failed": failed},
            "warnings": list(self.warnings),
        }


def _finite(x: float):
    # JSON has no NaN; failed slices have no deviation to report
    return x if math.isfinite(x) else None


@contextlib.contextmanager
def _timed(timings: dict, key: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[key] = time.perf_counter() - t0


def run_pipeline(v: Volume, cfg: PipelineConfig, refine: bool = True) -> RunResult:
    res = RunResult(v, cfg)
    with stage("detect"), _timed(res.timings, "detect"):
        res.detections = run_detect(v, cfg)
    with stage("track"), _timed(res.timings, "track"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res.tracklets = run_track(res.detections, cfg)
        res.warnings.extend(f"track: {w.message}" for w in caught)
        res.centerlines = [extract_centerline(t) for t in res.tracklets]
    seg = make_segmenter(cfg)
    if refine:
        with stage("refine"), _timed(res.timings, "segment+refine"):
            res.refined = [refine_centerline(v, c, seg, cfg.refine_threshold,
                                             cfg.refine_max_iter, cfg.workers)
                           for c in res.centerlines]
    else:
        with stage("segment"), _timed(res.timings, "segment"):
            res.segmented = [segment_centerline(v, c, seg, cfg.workers)
                             for c in res.centerlines]
    return res


# -- outputs ---------------------------------------------------------------------------

def write_segmentation(out: Path, v: Volume, per_vessel: list[list[SliceResult]]):
    contours, conf = [], []
    for vid, results in enumerate(per_vessel):
        for r in results:
            contours.append(r.contour_set(vid))
            conf.append({"vessel": vid, "slice": r.slice, "segconf": r.confidence})
    write_contours(contours, out / "contours.json")
    write_json(conf, out / "confidence.json")
    write_volume(Volume(label_volume(v, per_vessel), v.spacing), out / "masks.json")


def write_run(res: RunResult, out_dir) -> None:
    """Write every stage's output; ``timings.json`` is the only file that
    varies between identical runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_detections(res.detections, out / "detections.json")
    write_json([tracklet_to_dict(t, i) for i, t in enumerate(res.tracklets)],
               out / "tracklets.json")
    write_json([centerline_to_dict(c, i) for i, c in enumerate(res.centerlines)],
               out / "centerlines.json")
    if res.refined:
        write_json([centerline_to_dict(r.centerline, i) for i, r in enumerate(res.refined)],
                   out / "refined_centerlines.json")
    write_segmentation(out, res.volume, res.slice_results)
    write_json(res.report(), out / "report.json")
    write_json({k: round(t, 6) for k, t in res.timings.items()}, out / "timings.json")


def read_centerlines(path) -> list[Centerline]:
    recs = read_json(path)
    if not isinstance(recs, list):
        raise FormatError(str(path), "expected a JSON array of centerlines")
    if not recs:
        raise FormatError(str(path), "no centerlines")
    return [centerline_from_dict(r, f"centerlines[{i}]") for i, r in enumerate(recs)]


def evaluate_run(res_labels: np.ndarray, target_boxes, truth, spacing) -> dict:
    """Localization and segmentation scores against phantom ground truth.

    Dropout slices keep their true boxes (the vessel is still there) but are
    left out of the Dice average because there is no image to segment.
    """
    loc = localization_report(target_boxes, truth.target_boxes())
    seg = compare_label_volumes(res_labels, truth.wall_labels, truth.targets, spacing[:2],
                                truth.dropouts)
    return {"localization": loc.to_dict(), "segmentation": seg.to_dict(),
            "mean_iou": loc.mean_iou, "missed": loc.missed,
            "false_positive": loc.false_positive, "mean_dsc": seg.mean_dsc,
            "area_correlation": seg.area_correlation}
