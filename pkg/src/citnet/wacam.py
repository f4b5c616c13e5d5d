"""Windowed adaptive complementary attention.

Tokens are tiled into M x M windows (cyclically shifted by floor(M/2) in
alternate blocks, with an additive mask that stops tokens from different
pre-shift regions from mixing). Inside each window a shared pointwise
projection compresses channels C -> C/8, and four attention branches run in
parallel on the compressed windows:

* spatial: multi-head token-token attention with a relative position bias;
* channel: attention between channel tokens (sequence length C/8);
* cross-H: channel tokens query rows of the window;
* cross-W: channel tokens query columns of the window.

Branch outputs are fused by learnable scalars and projected back to C.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import Linear, Module, trunc_normal
from .tensor import Tensor, param

MASK_NEG = -1e9  # additive surrogate for -inf; keeps softmax finite


@dataclass
class WindowGrid:
    """Bookkeeping for one partition call, enough to invert it exactly."""

    batch: int
    h: int
    w: int
    M: int
    shift: int
    mask: Optional[np.ndarray]  # [nW, M*M, M*M] additive, 0 or MASK_NEG

    @property
    def n_windows(self) -> int:
        return (self.h // self.M) * (self.w // self.M)


def build_attention_mask(h: int, w: int, M: int, shift: int) -> np.ndarray:
    """Additive mask for shifted windows: 0 within a region pair, MASK_NEG across.

    Region ids label the three row bands and three column bands that the
    cyclic shift makes discontinuous; tokens attend only within matching ids.
    """
    labels = np.zeros((h, w), dtype=np.int64)
    bands = (slice(0, h - M), slice(h - M, h - shift), slice(h - shift, None))
    bands_w = (slice(0, w - M), slice(w - M, w - shift), slice(w - shift, None))
    cnt = 0
    for ys in bands:
        for xs in bands_w:
            labels[ys, xs] = cnt
            cnt += 1
    tiles = labels.reshape(h // M, M, w // M, M).transpose(0, 2, 1, 3).reshape(-1, M * M)
    diff = tiles[:, :, None] != tiles[:, None, :]
    return np.where(diff, MASK_NEG, 0.0)


def window_partition(x: Tensor, M: int, shift: int = 0) -> tuple[Tensor, WindowGrid]:
    """[B, h, w, C] -> ([B * nW, M*M, C], grid). Rolls by (-shift, -shift) first."""
    if x.ndim != 4:
        raise DimensionError(f"expected [B,h,w,C], got {x.shape}")
    B, h, w, C = x.shape
    if h % M or w % M:
        raise DimensionError(f"window size {M} must divide token grid {h}x{w}")
    if shift:
        x = T.roll(x, (-shift, -shift), (1, 2))
    tiles = T.reshape(x, (B, h // M, M, w // M, M, C))
    tiles = T.permute(tiles, (0, 1, 3, 2, 4, 5))
    windows = T.reshape(tiles, (B * (h // M) * (w // M), M * M, C))
    mask = build_attention_mask(h, w, M, shift) if shift else None
    return windows, WindowGrid(batch=B, h=h, w=w, M=M, shift=shift, mask=mask)


def window_merge(windows: Tensor, grid: WindowGrid) -> Tensor:
    """Exact inverse of :func:`window_partition` (including the shift)."""
    B, h, w, M = grid.batch, grid.h, grid.w, grid.M
    C = windows.shape[-1]
    tiles = T.reshape(windows, (B, h // M, w // M, M, M, C))
    tiles = T.permute(tiles, (0, 1, 3, 2, 4, 5))
    x = T.reshape(tiles, (B, h, w, C))
    if grid.shift:
        x = T.roll(x, (grid.shift, grid.shift), (1, 2))
    return x


def relative_position_index(M: int) -> np.ndarray:
    """[M*M, M*M] indices into the (2M-1)^2 relative-offset table."""
    coords = np.stack(np.meshgrid(np.arange(M), np.arange(M), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]  # [2, M*M, M*M]
    return (rel[0] + M - 1) * (2 * M - 1) + (rel[1] + M - 1)


class WacamLayer(Module):
    def __init__(self, dim: int, window: int, heads: int, rng: np.random.Generator,
                 shifted: bool = False, dtype=np.float32):
        if dim % 8 != 0:
            raise ConfigError(f"channel dim must be divisible by 8, got {dim}")
        d = dim // 8
        if d % heads != 0:
            raise ConfigError(f"compressed dim {d} must be divisible by heads {heads}")
        self.dim = dim
        self.window = window
        self.heads = heads
        self.shifted = shifted
        M = window
        self.compact = Linear(dim, d, rng, dtype=dtype)
        self.spatial_q = Linear(d, d, rng, dtype=dtype)
        self.spatial_k = Linear(d, d, rng, dtype=dtype)
        self.spatial_v = Linear(d, d, rng, dtype=dtype)
        self.channel_q = Linear(d, d, rng, dtype=dtype)
        self.channel_k = Linear(d, d, rng, dtype=dtype)
        self.channel_v = Linear(d, d, rng, dtype=dtype)
        # cross branches: channel tokens (features M*M) query axis tokens (features M*d)
        self.cross_h_q = param(trunc_normal(rng, (M * M, d), dtype=dtype))
        self.cross_h_k = param(trunc_normal(rng, (M * d, d), dtype=dtype))
        self.cross_h_v = param(trunc_normal(rng, (M * d, d), dtype=dtype))
        self.cross_h_o = param(trunc_normal(rng, (d, M * M), dtype=dtype))
        self.cross_w_q = param(trunc_normal(rng, (M * M, d), dtype=dtype))
        self.cross_w_k = param(trunc_normal(rng, (M * d, d), dtype=dtype))
        self.cross_w_v = param(trunc_normal(rng, (M * d, d), dtype=dtype))
        self.cross_w_o = param(trunc_normal(rng, (d, M * M), dtype=dtype))
        self.rpb = param(trunc_normal(rng, ((2 * M - 1) ** 2, heads), dtype=dtype))
        self.lambdas = param(np.ones(4, dtype=dtype))
        self.out = Linear(d, dim, rng, dtype=dtype)
        self._rp_index = relative_position_index(M)

    def forward(self, x: Tensor) -> Tensor:
        return wacam_forward(self, x)


def compact_projection(layer: WacamLayer, windows: Tensor) -> Tensor:
    """Shared pointwise channel compression C -> C/8 feeding all branches."""
    if windows.shape[-1] != layer.dim:
        raise DimensionError(f"expected channel dim {layer.dim}, got {windows.shape[-1]}")
    return layer.compact(windows)


def branch_spatial(layer: WacamLayer, z: Tensor, mask: Optional[np.ndarray] = None
                   ) -> tuple[Tensor, Tensor]:
    """Token-token multi-head attention with relative position bias.

    z: [nWB, M*M, d]. Returns (out [nWB, M*M, d], attn [nWB, H, M*M, M*M]).
    """
    nWB, N, d = z.shape
    H = layer.heads
    dh = d // H

    def heads_split(t):
        return T.permute(T.reshape(t, (nWB, N, H, dh)), (0, 2, 1, 3))  # [nWB,H,N,dh]

    q = heads_split(layer.spatial_q(z))
    k = heads_split(layer.spatial_k(z))
    v = heads_split(layer.spatial_v(z))
    scores = T.scale(T.matmul(q, T.permute(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    bias = T.permute(T.reshape(gathered_bias(layer), (N, N, H)), (2, 0, 1))  # [H,N,N]
    scores = T.add(scores, bias)
    if mask is not None:
        nW = mask.shape[0]
        scores = T.reshape(scores, (nWB // nW, nW, H, N, N))
        scores = T.add(scores, T.as_tensor(mask[None, :, None].astype(z.dtype.type)))
        scores = T.reshape(scores, (nWB, H, N, N))
    attn = T.softmax(scores, axis=-1)
    out = T.matmul(attn, v)  # [nWB, H, N, dh]
    out = T.reshape(T.permute(out, (0, 2, 1, 3)), (nWB, N, d))
    return out, attn


def gathered_bias(layer: WacamLayer) -> Tensor:
    N = layer.window * layer.window
    return T.gather_rows(layer.rpb, layer._rp_index.reshape(-1))  # [N*N, H]


def branch_channel(layer: WacamLayer, z: Tensor) -> tuple[Tensor, Tensor]:
    """Attention across the d channel tokens; no position bias, no spatial mask."""
    nWB, N, d = z.shape
    q = T.permute(layer.channel_q(z), (0, 2, 1))  # [nWB, d, N]
    k = T.permute(layer.channel_k(z), (0, 2, 1))
    v = T.permute(layer.channel_v(z), (0, 2, 1))
    scores = T.scale(T.matmul(q, T.permute(k, (0, 2, 1))), 1.0 / math.sqrt(N))
    attn = T.softmax(scores, axis=-1)  # [nWB, d, d]
    out = T.matmul(attn, v)  # [nWB, d, N]
    return T.permute(out, (0, 2, 1)), attn


def branch_cross(layer: WacamLayer, z: Tensor, axis: str) -> tuple[Tensor, Tensor]:
    """Channel tokens attend over one spatial axis of the window.

    Queries come from the channel view [d, M*M]; keys/values from the axis
    view [M, M*d] (rows of the window for axis='h', columns for axis='w').
    """
    if axis not in ("h", "w"):
        raise ConfigError(f"cross branch axis must be 'h' or 'w', got {axis!r}")
    nWB, N, d = z.shape
    M = layer.window
    if N != M * M:
        raise DimensionError(f"window holds {N} tokens, expected {M * M}")
    wq, wk, wv, wo = (
        (layer.cross_h_q, layer.cross_h_k, layer.cross_h_v, layer.cross_h_o)
        if axis == "h"
        else (layer.cross_w_q, layer.cross_w_k, layer.cross_w_v, layer.cross_w_o)
    )
    win = T.reshape(z, (nWB, M, M, d))
    chan = T.reshape(T.permute(win, (0, 3, 1, 2)), (nWB, d, M * M))  # [nWB, d, N]
    if axis == "w":
        win = T.permute(win, (0, 2, 1, 3))  # index rows by the W axis instead
    axis_tokens = T.reshape(win, (nWB, M, M * d))

    q = T.matmul(chan, wq)  # [nWB, d, d]
    k = T.matmul(axis_tokens, wk)  # [nWB, M, d]
    v = T.matmul(axis_tokens, wv)  # [nWB, M, d]
    scores = T.scale(T.matmul(q, T.permute(k, (0, 2, 1))), 1.0 / math.sqrt(d))
    attn = T.softmax(scores, axis=-1)  # [nWB, d, M]
    mixed = T.matmul(attn, v)  # [nWB, d, d]
    out = T.matmul(mixed, wo)  # [nWB, d, M*M]
    out = T.permute(T.reshape(out, (nWB, d, M, M)), (0, 2, 3, 1))
    return T.reshape(out, (nWB, N, d)), attn


def fuse_branches(layer: WacamLayer, outs: list[Tensor]) -> Tensor:
    """Out = sum_i lambda_i * Out_i with unconstrained scalar weights."""
    if len(outs) != 4:
        raise DimensionError(f"expected 4 branch outputs, got {len(outs)}")
    shape = outs[0].shape
    for i, o in enumerate(outs[1:], start=2):
        if o.shape != shape:
            raise DimensionError(f"branch 1 shape {shape} != branch {i} shape {o.shape}")
    total = None
    for i, o in enumerate(outs):
        term = T.mul(o, T.reshape(T.narrow(layer.lambdas, 0, i, 1), (1,) * o.ndim))
        total = term if total is None else T.add(total, term)
    return total


def wacam_forward(layer: WacamLayer, x: Tensor) -> Tensor:
    """Partition -> compress -> four branches -> fuse -> expand -> merge."""
    if x.shape[-1] != layer.dim:
        raise DimensionError(f"expected channel dim {layer.dim}, got {x.shape}")
    shift = layer.window // 2 if layer.shifted else 0
    windows, grid = window_partition(x, layer.window, shift)
    z = compact_projection(layer, windows)
    out1, _ = branch_spatial(layer, z, mask=grid.mask)
    out2, _ = branch_channel(layer, z)
    out3, _ = branch_cross(layer, z, "h")
    out4, _ = branch_cross(layer, z, "w")
    fused = fuse_branches(layer, [out1, out2, out3, out4])
    y = layer.out(fused)
    return window_merge(y, grid)
