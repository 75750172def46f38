"""CPU-only monocular depth estimation with patch-wise EdgeConv and attention, on numpy."""

from .config import PRESETS, RunConfig, load_config
from .data import DepthSample, load_dataset, load_raster, save_raster, synth_scene, synthetic_dataset
from .errors import ConfigError, DomainError, EmptyMaskError, FormatError, NumericError, ShapeError
from .gradcheck import GradCheckReport, grad_check
from .losses import DepthPair, MetricsReport, compute_metrics, silog_loss
from .model import DepthNet, ModelConfig
from .patch_graph import edge_features, em_forward, knn_graph, patch_embed
from .tensor import Tensor, backward
from .train import evaluate, predict

__version__ = "0.1.0"

__all__ = [
    "PRESETS",
    "RunConfig",
    "load_config",
    "DepthSample",
    "load_dataset",
    "load_raster",
    "save_raster",
    "synth_scene",
    "synthetic_dataset",
    "ConfigError",
    "DomainError",
    "EmptyMaskError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "GradCheckReport",
    "grad_check",
    "DepthPair",
    "MetricsReport",
    "compute_metrics",
    "silog_loss",
    "DepthNet",
    "ModelConfig",
    "edge_features",
    "em_forward",
    "knn_graph",
    "patch_embed",
    "Tensor",
    "backward",
    "evaluate",
    "predict",
]
