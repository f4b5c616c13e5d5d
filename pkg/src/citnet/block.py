"""Transformer block pairs with the lightweight perceptron module.

The LPM replaces the usual dense expansion MLP: half the hidden features
come from a dense map, the other half from a cheap depthwise 3x3 over the
token grid, so its parameter count stays strictly below the equivalent
dense MLP at every width.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import DepthwiseConv2d, LayerNorm, Linear, Module, map_to_tokens, tokens_to_map
from .tensor import Tensor
from .wacam import WacamLayer, wacam_forward


def lpm_param_count(dim: int, ratio: int = 4) -> int:
    """Parameters of the LPM at width ``dim`` (weights + biases)."""
    half = dim * ratio // 2
    primary = dim * half + half
    cheap = half * 9 + half
    out = 2 * half * dim + dim
    return primary + cheap + out


def dense_mlp_param_count(dim: int, ratio: int = 4) -> int:
    """Parameters of the dense two-layer MLP the LPM replaces."""
    hidden = dim * ratio
    return dim * hidden + hidden + hidden * dim + dim


class LpmLayer(Module):
    def __init__(self, dim: int, rng: np.random.Generator, ratio: int = 4, dtype=np.float32):
        if (dim * ratio) % 2 != 0:
            raise ConfigError(f"hidden width dim*ratio={dim * ratio} must be even")
        half = dim * ratio // 2
        self.dim = dim
        self.ratio = ratio
        self.primary = Linear(dim, half, rng, dtype=dtype)
        self.cheap = DepthwiseConv2d(half, 3, rng, padding=1, dtype=dtype)
        self.out = Linear(2 * half, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return lpm_forward(self, x)


def lpm_forward(layer: LpmLayer, x: Tensor) -> Tensor:
    """concat(dense half, depthwise half) -> GELU -> dense back to C."""
    p = layer.primary(x)  # [B,h,w,half]
    c = map_to_tokens(layer.cheap(tokens_to_map(p)))
    hidden = T.gelu(T.concat([p, c], axis=-1))
    return layer.out(hidden)


class TransformerBlockPair(Module):
    """Two successive blocks: plain-window attention then shifted-window attention,
    each followed by an LPM, all with pre-norm residuals.

    ``shift_enabled=False`` keeps both attention layers unshifted (used when the
    token grid is a single window and shifting would be a no-op).
    """

    def __init__(self, dim: int, window: int, heads: int, rng: np.random.Generator,
                 lpm_ratio: int = 4, shift_enabled: bool = True, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = WacamLayer(dim, window, heads, rng, shifted=False, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.lpm1 = LpmLayer(dim, rng, ratio=lpm_ratio, dtype=dtype)
        self.norm3 = LayerNorm(dim, dtype=dtype)
        self.attn_shifted = WacamLayer(dim, window, heads, rng,
                                       shifted=shift_enabled, dtype=dtype)
        self.norm4 = LayerNorm(dim, dtype=dtype)
        self.lpm2 = LpmLayer(dim, rng, ratio=lpm_ratio, dtype=dtype)
        self.last_trace: list[str] = []

    def forward(self, x: Tensor) -> Tensor:
        return block_pair_forward(self, x)


def block_pair_forward(pair: TransformerBlockPair, x: Tensor) -> Tensor:
    trace = pair.last_trace = []
    trace.append("LN")
    t_hat = T.add(wacam_forward(pair.attn, pair.norm1(x)), x)
    trace.append("W-ACAM")
    trace.append("LN")
    t = T.add(lpm_forward(pair.lpm1, pair.norm2(t_hat)), t_hat)
    trace.append("LPM")
    trace.append("LN")
    t_hat2 = T.add(wacam_forward(pair.attn_shifted, pair.norm3(t)), t)
    trace.append("SW-ACAM" if pair.attn_shifted.shifted else "W-ACAM")
    trace.append("LN")
    out = T.add(lpm_forward(pair.lpm2, pair.norm4(t_hat2)), t_hat2)
    trace.append("LPM")
    return out


def zero_block_pair(pair: TransformerBlockPair) -> None:
    """Zero every weight so both residual branches emit exactly zero (test hook)."""
    for _, p in pair.named_parameters():
        p.data = np.zeros_like(p.data)
