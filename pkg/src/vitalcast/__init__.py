"""vitalcast: multi-horizon ICU vital-sign forecasting toolkit."""

__version__ = "0.1.0"

from .engine import Tensor, Adam, finite_difference_gradient
from .losses import DilateConfig, dilate_loss, mse_loss, soft_dtw

__all__ = [
    "Tensor",
    "Adam",
    "finite_difference_gradient",
    "DilateConfig",
    "dilate_loss",
    "mse_loss",
    "soft_dtw",
    "__version__",
]
