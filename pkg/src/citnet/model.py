"""Dual-branch segmentation model.

A convolutional branch (stacked dynamic deformable convolutions on a
U-shaped resolution ladder) and a transformer branch (windowed four-branch
attention blocks on a patch-token ladder) run side by side. Each decoder
stage fuses its own upsampled features with the skip from its own encoder
*and* the skip from the other branch's encoder, and a final head merges
both branches at full resolution into class logits.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .block import TransformerBlockPair, block_pair_forward
from .config import ModelConfig, StagePlan, derive_plan
from .ddconv import DDConvLayer, ddconv_forward
from .errors import ConfigError, DimensionError
from .nn import Conv2d, GroupNorm, LayerNorm, Linear, Module, map_to_tokens, tokens_to_map
from .tensor import Tensor


class PatchEmbed(Module):
    """Non-overlapping patch -> token projection with layer norm."""

    def __init__(self, patch: int, in_ch: int, dim: int, rng, dtype=np.float32):
        self.patch = patch
        self.proj = Linear(patch * patch * in_ch, dim, rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        p = self.patch
        if H % p or W % p:
            raise ConfigError(f"image {H}x{W} not divisible by patch {p}")
        t = T.reshape(x, (B, C, H // p, p, W // p, p))
        t = T.permute(t, (0, 2, 4, 3, 5, 1))  # [B,h,w,p,p,C]
        t = T.reshape(t, (B, H // p, W // p, p * p * C))
        return self.norm(self.proj(t))


class PatchMerge(Module):
    """2x2 neighbor concat (4C) -> linear to 2C -> norm."""

    def __init__(self, dim: int, rng, dtype=np.float32):
        self.proj = Linear(4 * dim, 2 * dim, rng, dtype=dtype)
        self.norm = LayerNorm(2 * dim, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        B, h, w, C = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"patch merge needs even dims, got {h}x{w}")
        t = T.reshape(x, (B, h // 2, 2, w // 2, 2, C))
        t = T.permute(t, (0, 1, 3, 2, 4, 5))
        t = T.reshape(t, (B, h // 2, w // 2, 4 * C))
        return self.norm(self.proj(t))


class PatchExpand(Module):
    """Linear C -> 2C, rearranged into a 2x2 spatial block of C/2 channels."""

    def __init__(self, dim: int, rng, dtype=np.float32):
        if dim % 2:
            raise ConfigError(f"patch expand needs even channels, got {dim}")
        self.proj = Linear(dim, 2 * dim, rng, dtype=dtype)
        self.norm = LayerNorm(dim // 2, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        B, h, w, C = x.shape
        t = self.proj(x)  # [B,h,w,2C]
        t = T.reshape(t, (B, h, w, 2, 2, C // 2))
        t = T.permute(t, (0, 1, 3, 2, 4, 5))
        t = T.reshape(t, (B, 2 * h, 2 * w, C // 2))
        return self.norm(t)


class FinalExpand(Module):
    """One-shot x`patch` token upsampling to full resolution, keeping C."""

    def __init__(self, dim: int, patch: int, rng, dtype=np.float32):
        self.patch = patch
        self.proj = Linear(dim, patch * patch * dim, rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        B, h, w, C = x.shape
        p = self.patch
        t = self.proj(x)
        t = T.reshape(t, (B, h, w, p, p, C))
        t = T.permute(t, (0, 1, 3, 2, 4, 5))
        t = T.reshape(t, (B, p * h, p * w, C))
        return self.norm(t)


class CnnUnit(Module):
    """DDConv -> group norm -> GELU; offsets can be pinned to zero (ablation)."""

    def __init__(self, in_ch: int, out_ch: int, rng, k: int = 3, stride: int = 1,
                 padding: int = 1, n: int = 2, use_offsets: bool = True,
                 static_alpha: bool = False, dtype=np.float32):
        self.conv = DDConvLayer(in_ch, out_ch, rng, k=k, stride=stride, padding=padding,
                                n=n, static_alpha=static_alpha, dtype=dtype)
        self.norm = GroupNorm(out_ch, dtype=dtype)
        self.use_offsets = use_offsets

    def forward(self, x: Tensor) -> Tensor:
        if self.use_offsets:
            out = ddconv_forward(self.conv, x)
        else:
            B, _, H, W = x.shape
            k, s, p = self.conv.k, self.conv.stride, self.conv.padding
            Ho = (H + 2 * p - k) // s + 1
            Wo = (W + 2 * p - k) // s + 1
            zeros = T.as_tensor(np.zeros((B, 2 * k * k, Ho, Wo), dtype=x.dtype))
            out = ddconv_forward(self.conv, x, offsets=zeros)
        return T.gelu(self.norm(out))


class PointwiseFuse(Module):
    """Concat along channels then a 1x1 conv back to the stage width."""

    def __init__(self, in_ch: int, out_ch: int, rng, dtype=np.float32):
        self.proj = Conv2d(in_ch, out_ch, 1, rng, dtype=dtype)

    def forward(self, parts: list[Tensor]) -> Tensor:
        res = {p.shape[2:] for p in parts}
        if len(res) != 1:
            raise DimensionError(f"cross-feed resolution mismatch: {sorted(res)}")
        return self.proj(T.concat(parts, axis=1))


class CitNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.plan: StagePlan = derive_plan(cfg)
        plan = self.plan
        d = plan.n_down
        W = cfg.resolved_cnn_width()
        n = 1 if cfg.plain_conv else cfg.ddconv_n
        use_off = not cfg.plain_conv
        unit_kw = dict(n=n, use_offsets=use_off, static_alpha=cfg.static_alpha, dtype=dtype)

        # transformer branch
        self.patch_embed = PatchEmbed(cfg.patch_size, cfg.in_channels, cfg.base_dim, rng, dtype)
        self.trans_enc = [self._stage_pairs(s, rng, dtype) for s in plan.encoder]
        self.merges = [PatchMerge(s.trans_dim, rng, dtype) for s in plan.encoder]
        self.trans_bottleneck = self._stage_pairs(plan.bottleneck, rng, dtype)
        self.expands = []
        self.trans_fuse = []
        self.trans_dec = []
        for s in plan.decoder:
            self.expands.append(PatchExpand(2 * s.trans_dim, rng, dtype))
            fuse_in = 2 * s.trans_dim + (W if cfg.cross_feed else 0)
            self.trans_fuse.append(Linear(fuse_in, s.trans_dim, rng, dtype=dtype))
            self.trans_dec.append(self._stage_pairs(s, rng, dtype))
        self.final_expand = FinalExpand(cfg.base_dim, cfg.patch_size, rng, dtype)
        self.trans_head = Linear(cfg.base_dim, cfg.head_width(), rng, dtype=dtype)

        # convolutional branch (constant width, resolutions mirror the plan)
        self.stem = Conv2d(cfg.in_channels, W, cfg.patch_size, rng,
                           stride=cfg.patch_size, dtype=dtype)
        self.stem_norm = GroupNorm(W, dtype=dtype)
        self.cnn_enc = [[CnnUnit(W, W, rng, **unit_kw), CnnUnit(W, W, rng, **unit_kw)]
                        for _ in range(d)]
        # 2x2 stride-2 halves even grids exactly (a 3x3 stride-2 cannot)
        self.cnn_down = [CnnUnit(W, W, rng, k=2, stride=2, padding=0, **unit_kw)
                         for _ in range(d)]
        self.cnn_bottleneck = [CnnUnit(W, W, rng, **unit_kw), CnnUnit(W, W, rng, **unit_kw)]
        self.cnn_up = [CnnUnit(W, W, rng, **unit_kw) for _ in range(d)]
        self.cnn_fuse = []
        self.cnn_dec = []
        for s in plan.decoder:
            fuse_in = 2 * W + (s.trans_dim if cfg.cross_feed else 0)
            self.cnn_fuse.append(PointwiseFuse(fuse_in, W, rng, dtype))
            self.cnn_dec.append([CnnUnit(W, W, rng, **unit_kw), CnnUnit(W, W, rng, **unit_kw)])
        self.cnn_head = Conv2d(W, cfg.head_width(), 1, rng, dtype=dtype)

        self.fuse_head = Conv2d(2 * cfg.head_width(), cfg.n_classes, 1, rng, dtype=dtype)

        if cfg.spatial_attention_only:
            self._freeze_spatial_only()

    def _stage_pairs(self, spec, rng, dtype) -> list[TransformerBlockPair]:
        return [
            TransformerBlockPair(spec.trans_dim, self.cfg.window, spec.heads, rng,
                                 lpm_ratio=self.cfg.lpm_ratio,
                                 shift_enabled=spec.shift_enabled, dtype=dtype)
            for _ in range(spec.blocks // 2)
        ]

    def _freeze_spatial_only(self) -> None:
        for name, p in self.named_parameters():
            if name.endswith("lambdas"):
                p.data = np.array([1.0, 0.0, 0.0, 0.0], dtype=p.dtype)
                p.requires_grad = False

    def forward(self, x: Tensor) -> Tensor:
        return citnet_forward(self, x)


def _run_pairs(pairs: list[TransformerBlockPair], tokens: Tensor) -> Tensor:
    for pair in pairs:
        tokens = block_pair_forward(pair, tokens)
    return tokens


def _run_units(units, feat: Tensor) -> Tensor:
    for unit in units:
        feat = unit(feat)
    return feat


def citnet_forward(model: CitNet, x: Tensor) -> Tensor:
    cfg = model.cfg
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise DimensionError(f"expected [B,{cfg.in_channels},H,W], got {x.shape}")
    if x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
        raise DimensionError(f"configured for {cfg.image_size}^2 inputs, got {x.shape}")

    tokens = model.patch_embed(x)
    feat = T.gelu(model.stem_norm(model.stem(x)))

    trans_skips: list[Tensor] = []
    cnn_skips: list[Tensor] = []
    for i in range(model.plan.n_down):
        tokens = _run_pairs(model.trans_enc[i], tokens)
        feat = _run_units(model.cnn_enc[i], feat)
        trans_skips.append(tokens)
        cnn_skips.append(feat)
        tokens = model.merges[i](tokens)
        feat = model.cnn_down[i](feat)

    tokens = _run_pairs(model.trans_bottleneck, tokens)
    feat = _run_units(model.cnn_bottleneck, feat)

    for j in range(model.plan.n_down):
        level = model.plan.n_down - 1 - j
        tokens = model.expands[j](tokens)
        feat = model.cnn_up[j](T.upsample2x(feat))
        t_parts = [tokens, trans_skips[level]]
        c_parts = [feat, cnn_skips[level]]
        if cfg.cross_feed:
            t_parts.append(map_to_tokens(cnn_skips[level]))
            c_parts.append(tokens_to_map(trans_skips[level]))
        tokens = model.trans_fuse[j](T.concat(t_parts, axis=-1))
        feat = model.cnn_fuse[j](c_parts)
        tokens = _run_pairs(model.trans_dec[j], tokens)
        feat = _run_units(model.cnn_dec[j], feat)

    trans_full = model.trans_head(model.final_expand(tokens))  # [B,H,W,hw]
    trans_map = tokens_to_map(trans_full)
    for _ in range(int(np.log2(cfg.patch_size))):
        feat = T.upsample2x(feat)
    cnn_map = model.cnn_head(feat)
    return model.fuse_head(T.concat([cnn_map, trans_map], axis=1))


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> CitNet:
    return CitNet(cfg, np.random.default_rng(seed), dtype=dtype)
