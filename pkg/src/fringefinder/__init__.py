"""Deformation detection in wrapped-phase interferograms.

Synthetic data generation, patch tiling with edge gating, a from-scratch
micro-CNN with verified gradients, Gaussian-weighted heatmap merging,
ROC evaluation, and an expert feedback/retrain service.
"""

__version__ = "0.1.0"

from .raster import PhaseRaster, phase_gradient, read_raster, wrap_phase, write_raster
from .synthgen import AtmosphereParams, MogiParams, SampleRecord, build_dataset, make_interferogram
from .tiler import Patch, PatchSpec, grid_positions
from .nn import Hyper, Model, ModelConfig, load_model, save_model, train
from .merger import Detection, Heatmap, extract_detections, gaussian_kernel, merge
from .evalkit import OperatingPoint, RocCurve, cross_validate, kfold_split, operating_point, roc
from .pipeline import DataStore, RunConfig, RunRecord, detect_image

__all__ = [
    "AtmosphereParams",
    "DataStore",
    "Detection",
    "Heatmap",
    "Hyper",
    "Model",
    "ModelConfig",
    "MogiParams",
    "OperatingPoint",
    "Patch",
    "PatchSpec",
    "PhaseRaster",
    "RocCurve",
    "RunConfig",
    "RunRecord",
    "SampleRecord",
    "build_dataset",
    "cross_validate",
    "detect_image",
    "extract_detections",
    "gaussian_kernel",
    "grid_positions",
    "kfold_split",
    "load_model",
    "make_interferogram",
    "merge",
    "operating_point",
    "phase_gradient",
    "read_raster",
    "roc",
    "save_model",
    "train",
    "wrap_phase",
    "write_raster",
]
