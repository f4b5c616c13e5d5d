"""Toy optimizer loop: adaptive moment estimation over the parameter registry.

The loop is full-batch (a step and an epoch coincide), so the published
plateau rule "halve the rate after 10 epochs without improvement" is applied
to the training loss per step; the substitution is deliberate since the desk
harness has no validation split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import TrainingDiverged, UsageError
from .losses import combined_loss
from .metrics import MetricsReport, evaluate_masks
from .model import CitNet, citnet_forward
from .tensor import Tensor


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data = p.data - p.data.dtype.type(self.lr) * update.astype(p.data.dtype)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    dice: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"loss": self.loss, "dice": self.dice, "lr": self.lr}


def _batch_tensors(samples, dtype) -> tuple[Tensor, Tensor]:
    images = np.stack([s.image for s in samples]).astype(dtype)
    masks = np.stack([s.mask for s in samples]).astype(dtype)
    return T.as_tensor(images), T.as_tensor(masks)


def predict_probs(model: CitNet, images: Tensor) -> Tensor:
    """Foreground probabilities [B, H, W] for the binary head."""
    if model.cfg.n_classes != 1:
        raise UsageError("the toy harness drives the single-foreground-class head")
    logits = citnet_forward(model, images)
    return T.sigmoid(T.reshape(logits, (logits.shape[0], *logits.shape[2:])))


def train_toy(model: CitNet, samples, steps: int, lr: float = 1e-3,
              plateau_patience: int = 10, log_every: int | None = None) -> TrainHistory:
    """Overfit the model to a small sample set; returns per-step history."""
    if not samples:
        raise UsageError("train_toy needs at least one sample")
    dtype = model.patch_embed.proj.weight.dtype
    images, masks = _batch_tensors(samples, dtype)
    optimizer = Adam(model.parameters(), lr=lr)
    history = TrainHistory()
    best = math.inf
    stale = 0
    for step in range(steps):
        optimizer.zero_grad()
        probs = predict_probs(model, images)
        loss = combined_loss(probs, masks)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at step {step} (lr={optimizer.lr})")
        loss.backward()
        optimizer.step()
        binary = (probs.data >= 0.5).astype(np.float64)
        dice = evaluate_masks(list(binary), list(masks.data)).mean("dice")
        history.loss.append(value)
        history.dice.append(dice)
        history.lr.append(optimizer.lr)
        if value < best - 1e-6:
            best = value
            stale = 0
        else:
            stale += 1
            if stale >= plateau_patience:
                optimizer.lr /= 2.0
                stale = 0
        if log_every and step % log_every == 0:
            print(f"step {step:4d}  loss {value:.4f}  dice {dice:.4f}  lr {optimizer.lr:.2e}")
    return history


def evaluate(model: CitNet, samples, threshold: float = 0.5) -> MetricsReport:
    dtype = model.patch_embed.proj.weight.dtype
    images, masks = _batch_tensors(samples, dtype)
    probs = predict_probs(model, images)
    preds = (probs.data >= threshold).astype(np.float64)
    return evaluate_masks(list(preds), list(masks.data))
