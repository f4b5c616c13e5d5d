"""Dual-branch CNN/Transformer segmentation library on a self-contained autodiff core."""

from .tensor import Tensor, Tape, as_tensor, param, set_finite_checks

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "as_tensor", "param", "set_finite_checks", "__version__"]
