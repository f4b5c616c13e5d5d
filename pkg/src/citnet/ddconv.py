"""Dynamic deformable convolution.

Two mechanisms compose on top of a vanilla convolution:

* deformable sampling: a zero-initialized convolution head predicts a
  (dy, dx) offset for each kernel position at each output location, and the
  input is read at the displaced real-valued positions by bilinear
  interpolation (out-of-image reads are zero, like zero padding);
* dynamic weights: the kernel applied to each batch item is a convex
  combination of ``n`` candidate weight banks, with softmax coefficients
  produced from the globally pooled input (or from free parameters when
  ``static_alpha`` is set).

With zero offsets and a single bank the layer reduces exactly to the plain
``conv2d`` primitive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import Conv2d, Linear, Module, trunc_normal
from .tensor import Tensor, param


@dataclass(frozen=True)
class SamplingGrid:
    """The k*k integer kernel offsets, re-centered so (0, 0) is the kernel middle."""

    k: int
    offsets: np.ndarray  # [k*k, 2] int64, row-major over (dy, dx)

    def __len__(self) -> int:
        return self.k * self.k


def base_grid(k: int) -> SamplingGrid:
    """Enumerate {(0,0), (0,1), ..., (k-1,k-1)} shifted by -floor(k/2)."""
    if k < 1:
        raise ConfigError(f"kernel size must be >= 1, got {k}")
    half = k // 2
    offsets = np.array([(dy - half, dx - half) for dy in range(k) for dx in range(k)],
                       dtype=np.int64)
    return SamplingGrid(k=k, offsets=offsets)


class DDConvLayer(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, k: int = 3,
                 stride: int = 1, padding: int = 1, n: int = 4,
                 static_alpha: bool = False, dtype=np.float32):
        if n < 1:
            raise ConfigError(f"candidate kernel count must be >= 1, got {n}")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.k = k
        self.stride = stride
        self.padding = padding
        self.n = n
        self.static_alpha = static_alpha
        fan_in = in_ch * k * k
        self.banks = [
            param((rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(2.0 / fan_in)).astype(dtype))
            for _ in range(n)
        ]
        # zero init keeps the initial behavior identical to a vanilla conv
        self.offset_head = Conv2d(in_ch, 2 * k * k, k, rng, stride=stride,
                                  padding=padding, zero_init=True, dtype=dtype)
        if static_alpha:
            self.alpha_logits = param(np.zeros(n, dtype=dtype))
            self.coeff_head = None
        else:
            self.alpha_logits = None
            self.coeff_head = Linear(in_ch, n, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ddconv_forward(self, x)


def predict_offsets(layer: DDConvLayer, x: Tensor) -> Tensor:
    """Per-position (dy, dx) for every kernel sample: [B, 2*k*k, H', W']."""
    if x.ndim != 4 or x.shape[1] != layer.in_ch:
        raise DimensionError(f"expected [B,{layer.in_ch},H,W], got {x.shape}")
    return layer.offset_head(x)


def dynamic_weights(layer: DDConvLayer, x: Tensor) -> Tensor:
    """Convex bank combination, one kernel per batch item: [B, O, C, k, k].

    With ``static_alpha`` the combination is input-independent and the batch
    dim is 1 (it broadcasts over the batch in the forward pass).
    """
    n, O, C, k = layer.n, layer.out_ch, layer.in_ch, layer.k
    flat_banks = T.concat([T.reshape(b, (1, O * C * k * k)) for b in layer.banks], axis=0)
    if layer.static_alpha:
        alpha = T.softmax(T.reshape(layer.alpha_logits, (1, n)), axis=1)
    else:
        pooled = T.global_avg_pool(x)  # [B, C]
        alpha = T.softmax(layer.coeff_head(pooled), axis=1)  # [B, n]
    mixed = T.matmul(alpha, flat_banks)  # [B, O*C*k*k]
    return T.reshape(mixed, (-1, O, C, k, k))


def ddconv_forward(layer: DDConvLayer, x: Tensor, offsets: Tensor | None = None) -> Tensor:
    """Sample the input on the offset grid, contract with the per-item kernel.

    ``offsets`` can be injected for tests and ablations; by default it comes
    from the layer's offset head.
    """
    if x.ndim != 4 or x.shape[1] != layer.in_ch:
        raise DimensionError(f"expected [B,{layer.in_ch},H,W], got {x.shape}")
    B, C, H, W = x.shape
    k, s, p = layer.k, layer.stride, layer.padding
    if offsets is None:
        offsets = predict_offsets(layer, x)
    _, off_ch, Ho, Wo = offsets.shape
    if off_ch != 2 * k * k:
        raise DimensionError(f"offsets need {2 * k * k} channels, got {off_ch}")

    out_y = np.arange(Ho, dtype=x.dtype) * s - p
    out_x = np.arange(Wo, dtype=x.dtype) * s - p
    grid_y, grid_x = np.meshgrid(out_y, out_x, indexing="ij")

    patches = []
    for m in range(k * k):
        my, mx = m // k, m % k
        base = np.stack([grid_y + my, grid_x + mx])[None]  # [1, 2, Ho, Wo]
        delta = T.narrow(offsets, 1, 2 * m, 2)
        coords = T.add(T.as_tensor(base.astype(x.dtype)), delta)
        patches.append(T.bilinear_sample(x, coords))  # [B, C, Ho, Wo]
    sampled = T.concat(patches, axis=1)  # [B, k*k*C, Ho, Wo], kernel-position major
    sampled = T.reshape(sampled, (B, k * k * C, Ho * Wo))

    kernels = dynamic_weights(layer, x)  # [B or 1, O, C, k, k]
    kernels = T.permute(kernels, (0, 1, 3, 4, 2))  # [B, O, k, k, C]
    kernels = T.reshape(kernels, (kernels.shape[0], layer.out_ch, k * k * C))

    out = T.matmul(kernels, sampled)  # [B, O, Ho*Wo]
    return T.reshape(out, (B, layer.out_ch, Ho, Wo))
