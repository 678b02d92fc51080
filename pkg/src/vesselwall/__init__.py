"""Artery localization by tracklet refinement and polar vessel wall segmentation."""

from .config import PipelineConfig, load_config
from .io import BoundingBox, ContourSet, FormatError, Volume
from .pipeline import run_pipeline

__version__ = "0.1.0"

__all__ = ["BoundingBox", "ContourSet", "FormatError", "PipelineConfig", "Volume",
           "load_config", "run_pipeline"]
