"""Model configuration, variant presets, and the derived stage plan.

Configs serialize as JSON (the one structured-text grammar used across the
project for configs, reports, and histories). ``canonical_dumps`` fixes key
order and indentation so equal configs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError

# layer cadence and head counts per stage for the two published variants
VARIANTS = {
    "T": {"layer_numbers": [2, 2, 6, 2, 6, 2, 2], "heads": [3, 6, 12, 24, 12, 6, 3]},
    "B": {"layer_numbers": [2, 2, 18, 2, 18, 2, 2], "heads": [4, 8, 16, 32, 16, 8, 4]},
}

MAX_DOWN = 3  # encoder depth of the full seven-stage plan


@dataclass
class ModelConfig:
    variant: str = "T"
    image_size: int = 224
    patch_size: int = 4
    window: int = 7
    base_dim: int = 96
    layer_numbers: list[int] = field(default_factory=lambda: list(VARIANTS["T"]["layer_numbers"]))
    heads: list[int] = field(default_factory=lambda: list(VARIANTS["T"]["heads"]))
    n_classes: int = 1
    in_channels: int = 1
    # capacity knobs (budget notes in README): candidate kernels per DDConv,
    # LPM expansion ratio, constant CNN-branch width (defaults to base_dim)
    ddconv_n: int = 2
    lpm_ratio: int = 2
    cnn_width: int | None = None
    static_alpha: bool = False
    # ablation toggles
    plain_conv: bool = False
    spatial_attention_only: bool = False
    cross_feed: bool = True

    def resolved_cnn_width(self) -> int:
        return self.cnn_width if self.cnn_width is not None else self.base_dim

    def head_width(self) -> int:
        return max(self.base_dim // 2, 4)


def variant_config(variant: str, **overrides) -> ModelConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    cfg = ModelConfig(variant=variant,
                      layer_numbers=list(VARIANTS[variant]["layer_numbers"]),
                      heads=list(VARIANTS[variant]["heads"]))
    cfg = replace(cfg, **overrides)
    validate_config(cfg)
    return cfg


def micro_config(image_size: int = 28, base_dim: int = 8, **overrides) -> ModelConfig:
    """A desk-scale configuration for gradient checks and toy training."""
    cfg = ModelConfig(variant="micro", image_size=image_size, base_dim=base_dim,
                      layer_numbers=[2] * 7, heads=[1] * 7)
    cfg = replace(cfg, **overrides)
    validate_config(cfg)
    return cfg


@dataclass(frozen=True)
class StageSpec:
    index: int          # position along the seven-stage chain
    level: int          # 0 at full token resolution, increasing downward
    role: str           # encoder | bottleneck | decoder
    resolution: int     # token grid side
    trans_dim: int
    cnn_dim: int
    blocks: int
    heads: int
    shift_enabled: bool


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[StageSpec, ...]
    n_down: int
    grid: int

    @property
    def encoder(self) -> tuple[StageSpec, ...]:
        return tuple(s for s in self.stages if s.role == "encoder")

    @property
    def bottleneck(self) -> StageSpec:
        return next(s for s in self.stages if s.role == "bottleneck")

    @property
    def decoder(self) -> tuple[StageSpec, ...]:
        return tuple(s for s in self.stages if s.role == "decoder")


def _feasible_downs(grid: int, window: int) -> int:
    """Deepest halving ladder that keeps every level window-divisible."""
    downs = 0
    size = grid
    while downs < MAX_DOWN and size % 2 == 0 and (size // 2) % window == 0:
        size //= 2
        downs += 1
    return downs


def derive_plan(cfg: ModelConfig) -> StagePlan:
    validate_config(cfg)
    grid = cfg.image_size // cfg.patch_size
    d = _feasible_downs(grid, cfg.window)
    # central slice of the seven-entry lists covers scaled-down ladders
    lo, hi = MAX_DOWN - d, MAX_DOWN + d + 1
    blocks = cfg.layer_numbers[lo:hi]
    heads = cfg.heads[lo:hi]
    levels = list(range(d)) + [d] + list(range(d - 1, -1, -1))
    roles = ["encoder"] * d + ["bottleneck"] + ["decoder"] * d
    cnn_w = cfg.resolved_cnn_width()
    stages = []
    for i, (level, role) in enumerate(zip(levels, roles)):
        res = grid // (2 ** level)
        dim = cfg.base_dim * (2 ** level)
        if dim % 8:
            raise ConfigError(f"stage dim {dim} not divisible by 8")
        if (dim // 8) % heads[i]:
            raise ConfigError(
                f"stage {i}: compressed dim {dim // 8} not divisible by {heads[i]} heads"
            )
        stages.append(StageSpec(index=i, level=level, role=role, resolution=res,
                                trans_dim=dim, cnn_dim=cnn_w, blocks=blocks[i],
                                heads=heads[i], shift_enabled=res > cfg.window))
    return StagePlan(stages=tuple(stages), n_down=d, grid=grid)


def validate_config(cfg: ModelConfig) -> None:
    if cfg.variant in VARIANTS:
        preset = VARIANTS[cfg.variant]
        if cfg.layer_numbers != preset["layer_numbers"] or cfg.heads != preset["heads"]:
            raise ConfigError(f"variant {cfg.variant} requires its preset layer/head lists")
    if len(cfg.layer_numbers) != 2 * MAX_DOWN + 1 or len(cfg.heads) != 2 * MAX_DOWN + 1:
        raise ConfigError("layer_numbers and heads must have exactly 7 entries")
    for n in cfg.layer_numbers:
        if n < 2 or n % 2:
            raise ConfigError(f"layer numbers must be positive and even, got {cfg.layer_numbers}")
    for h in cfg.heads:
        if h < 1:
            raise ConfigError(f"head counts must be positive, got {cfg.heads}")
    if cfg.image_size % cfg.patch_size:
        raise ConfigError(f"image size {cfg.image_size} not divisible by patch {cfg.patch_size}")
    if cfg.patch_size & (cfg.patch_size - 1):
        raise ConfigError(f"patch size must be a power of two, got {cfg.patch_size}")
    grid = cfg.image_size // cfg.patch_size
    if grid % cfg.window:
        raise ConfigError(f"token grid {grid} not divisible by window {cfg.window}")
    if cfg.n_classes < 1 or cfg.in_channels < 1:
        raise ConfigError("n_classes and in_channels must be >= 1")
    if cfg.ddconv_n < 1:
        raise ConfigError(f"ddconv_n must be >= 1, got {cfg.ddconv_n}")
    if cfg.lpm_ratio < 1:
        raise ConfigError(f"lpm_ratio must be >= 1, got {cfg.lpm_ratio}")
    width = cfg.resolved_cnn_width()
    if width < 1:
        raise ConfigError(f"cnn_width must be >= 1, got {width}")


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(canonical_dumps(asdict(cfg)))


def load_config(path) -> ModelConfig:
    raw = Path(path).read_text()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def config_from_dict(data: dict) -> ModelConfig:
    known = {f for f in ModelConfig.__dataclass_fields__}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config fields: {unknown}")
    cfg = ModelConfig(**data)
    validate_config(cfg)
    return cfg
