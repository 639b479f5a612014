"""Dual past/future encoders for sequential recommendation."""

from .dualnet import DualRec, LossConfig, bit_loss
from .encoder import window_sizes
from .metrics import MetricsReport, evaluate_model

__all__ = ["DualRec", "LossConfig", "MetricsReport", "bit_loss", "evaluate_model", "window_sizes"]
__version__ = "0.1.0"
