"""Pipeline configuration: one JSON file, validated before any stage runs."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .polar import N_THETA, PATCH


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"config key {key!r}: {msg}")
        self.key = key


@dataclass
class PipelineConfig:
    # detection
    detector: str = "blobs"
    detections_path: str | None = None
    detect_threshold: float = 0.7
    detect_min_area: float = 15.0
    detect_max_area: float = 3000.0
    # tracking
    tau_link: float = 0.3
    loss_weights: tuple[float, float, float] = (0.2, 1.0, 1.0)
    max_gap: int = 5
    loss_max: float = 2.0
    k_targets: int = 2
    # segmentation
    backend: str = "oracle"
    smooth_sigma: float = 2.0
    patch_size: int = PATCH
    n_slices: int = 3
    window_height: int = 40
    window_stride: int = 20
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 1.0
    snake_max_iter: int = 100
    # refinement
    refine_threshold: float = 4.0
    refine_max_iter: int = 10
    segconf_floor: float = 0.5
    # phantom suite
    phantom_count: int = 10
    seed: int = 0
    workers: int = 1

    def validate(self) -> "PipelineConfig":
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(key, msg)

        def number(key):
            v = getattr(self, key)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
                 key, f"expected a finite number, got {v!r}")
            return v

        def integer(key):
            v = getattr(self, key)
            need(isinstance(v, int) and not isinstance(v, bool), key,
                 f"expected an integer, got {v!r}")
            return v

        need(self.detector in ("blobs", "file"), "detector", "must be 'blobs' or 'file'")
        need(self.detector != "file" or self.detections_path, "detections_path",
             "required when detector is 'file'")
        need(0 < number("detect_threshold") < 1, "detect_threshold", "must lie in (0, 1)")
        need(0 < number("detect_min_area") < number("detect_max_area"), "detect_min_area",
             "need 0 < detect_min_area < detect_max_area")
        need(0 < number("tau_link") < 1, "tau_link", "must lie in (0, 1)")
        w = self.loss_weights
        need(isinstance(w, (list, tuple)) and len(w) == 3
             and all(isinstance(x, (int, float)) and math.isfinite(x) and x >= 0 for x in w),
             "loss_weights", "expected three non-negative numbers")
        need(integer("max_gap") >= 0, "max_gap", "must be >= 0")
        need(number("loss_max") >= 0, "loss_max", "must be >= 0")
        need(integer("k_targets") >= 1, "k_targets", "must be >= 1")
        need(self.backend == "oracle", "backend", "only the 'oracle' backend is built in")
        need(number("smooth_sigma") >= 0, "smooth_sigma", "must be >= 0")
        need(integer("patch_size") == PATCH, "patch_size", f"must be {PATCH}")
        need(integer("n_slices") in (1, 3), "n_slices", "must be 1 or 3")
        need(1 <= integer("window_height") <= N_THETA, "window_height",
             f"must lie in [1, {N_THETA}]")
        need(1 <= integer("window_stride") <= self.window_height, "window_stride",
             "must lie in [1, window_height]")
        for key in ("alpha", "beta", "gamma"):
            need(number(key) >= 0, key, "must be >= 0")
        need(integer("snake_max_iter") >= 1, "snake_max_iter", "must be >= 1")
        need(number("refine_threshold") > 0, "refine_threshold", "must be > 0")
        need(integer("refine_max_iter") >= 1, "refine_max_iter", "must be >= 1")
        number("segconf_floor")
        need(integer("phantom_count") >= 1, "phantom_count", "must be >= 1")
        need(0 <= integer("seed") < 2 ** 64, "seed", "must be an unsigned 64-bit integer")
        need(integer("workers") >= 1, "workers", "must be >= 1")
        self.loss_weights = tuple(float(x) for x in w)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown key")
        return cls(**d).validate()


def load_config(path: str | Path | None = None, **overrides) -> PipelineConfig:
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected a JSON object")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(d)
