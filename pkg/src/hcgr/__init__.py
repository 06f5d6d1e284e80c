"""Session-based recommendation on the Lorentz hyperboloid."""

from .model import HCGRModel, HyperParams, ModelParams, load_checkpoint, save_checkpoint
from .training import TrainConfig, fit, gradient_check

__version__ = "0.1.0"

__all__ = [
    "HCGRModel",
    "HyperParams",
    "ModelParams",
    "TrainConfig",
    "fit",
    "gradient_check",
    "load_checkpoint",
    "save_checkpoint",
    "__version__",
]
