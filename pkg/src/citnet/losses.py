"""Differentiable losses for the toy segmentation harness."""

from __future__ import annotations

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


def dice_loss(pred: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s), over all elements."""
    if pred.shape != target.shape:
        raise DimensionError(f"dice shapes differ: {pred.shape} vs {target.shape}")
    inter = T.sum_(T.mul(pred, target))
    total = T.add(T.sum_(pred), T.sum_(target))
    num = T.add(T.scale(inter, 2.0), T.as_tensor(pred.data.dtype.type(smooth)))
    den = T.add(total, T.as_tensor(pred.data.dtype.type(smooth)))
    return T.add(T.scale(T.mul(num, T.pow_const(den, -1.0)), -1.0),
                 T.as_tensor(pred.data.dtype.type(1.0)))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = T.sub(pred, target)
    return T.mean(T.mul(diff, diff))


def combined_loss(pred: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """Equal-weight sum of dice and mean-squared-error terms."""
    return T.add(dice_loss(pred, target, smooth=smooth), mse_loss(pred, target))
