"""Parameter registry and the small layer vocabulary shared by the models."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor, param


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal samples re-drawn into [-2 std, 2 std]."""
    vals = rng.normal(0.0, std, size=shape)
    bad = np.abs(vals) > 2 * std
    while bad.any():
        vals[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(vals) > 2 * std
    return vals.astype(dtype)


class Module:
    """Minimal container: tracks parameters by attribute path, insertion-ordered."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}.{name}" if prefix else name
            yield from _walk(path, value)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def load_state_dict(self, state: dict[str, Tensor]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ConfigError(f"state mismatch; missing={missing[:5]} extra={extra[:5]}")
        for name, p in own.items():
            src = state[name]
            if src.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {src.shape} != model shape {p.shape}")
            p.data = src.data.astype(p.dtype, copy=True)

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def audit_no_shared_parameters(self) -> None:
        """Raise if two registry paths alias the same tensor."""
        seen: dict[int, str] = {}
        for name, p in self.named_parameters():
            if id(p) in seen:
                raise ConfigError(f"parameter shared between {seen[id(p)]} and {name}")
            seen[id(p)] = name

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(path: str, value) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{path}.{i}", item)


class Linear(Module):
    """y = x @ W + b over the final axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        self.weight = param(trunc_normal(rng, (in_dim, out_dim), dtype=dtype))
        self.bias = param(np.zeros(out_dim, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
        out = T.matmul(flat, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        if x.ndim != 2:
            out = T.reshape(out, (*lead, self.weight.shape[1]))
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        if eps <= 0:
            raise ConfigError(f"LayerNorm eps must be positive, got {eps}")
        self.gamma = param(np.ones(dim, dtype=dtype))
        self.beta = param(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class GroupNorm(Module):
    """Batch-free per-channel normalization for [B,C,H,W] maps."""

    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5, dtype=np.float32):
        if channels % groups != 0:
            groups = 1
        self.groups = groups
        self.eps = eps
        self.gamma = param(np.ones(channels, dtype=dtype))
        self.beta = param(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        g = self.groups
        flat = T.reshape(x, (B, g, (C // g) * H * W))
        normed = T.layer_norm(flat, eps=self.eps)
        normed = T.reshape(normed, (B, C, H, W))
        gamma = T.reshape(self.gamma, (1, C, 1, 1))
        beta = T.reshape(self.beta, (1, C, 1, 1))
        return T.add(T.mul(normed, gamma), beta)


class Conv2d(Module):
    """Plain convolution layer wrapping the conv2d primitive."""

    def __init__(self, in_ch: int, out_ch: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True,
                 zero_init: bool = False, dtype=np.float32):
        if zero_init:
            w = np.zeros((out_ch, in_ch, k, k), dtype=dtype)
        else:
            fan_in = in_ch * k * k
            w = (rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.weight = param(w)
        self.bias = param(np.zeros(out_ch, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            out = T.add(out, T.reshape(self.bias, (1, -1, 1, 1)))
        return out


class DepthwiseConv2d(Module):
    def __init__(self, channels: int, k: int, rng: np.random.Generator,
                 padding: int = 0, bias: bool = True, dtype=np.float32):
        fan_in = k * k
        w = (rng.standard_normal((channels, k, k)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.weight = param(w)
        self.bias = param(np.zeros(channels, dtype=dtype)) if bias else None
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out = T.depthwise_conv2d(x, self.weight, stride=1, padding=self.padding)
        if self.bias is not None:
            out = T.add(out, T.reshape(self.bias, (1, -1, 1, 1)))
        return out


def tokens_to_map(x: Tensor) -> Tensor:
    """[B, h, w, C] token grid -> [B, C, h, w] channel map."""
    return T.permute(x, (0, 3, 1, 2))


def map_to_tokens(x: Tensor) -> Tensor:
    """[B, C, h, w] channel map -> [B, h, w, C] token grid."""
    return T.permute(x, (0, 2, 3, 1))
