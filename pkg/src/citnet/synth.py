"""Deterministic synthetic blob-segmentation data.

Each sample is one to three soft-edged ellipses on a noisy background, with
the exact ellipse union as the mask. Contrast, edge blur, and noise knobs
mimic dim low-contrast imagery; with ``blur=0`` the image thresholded at
0.5 reproduces the mask exactly (noise amplitude stays below half the
foreground/background separation by construction).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import io as cio
from .errors import ConfigError

AREA_BAND = (0.05, 0.40)


@dataclass
class SegSample:
    image: np.ndarray  # [C, H, W] float32 in [0, 1]
    mask: np.ndarray   # [H, W] float32 in {0, 1}


def _ellipse_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
        ay, ax = rng.uniform(0.10 * size, 0.30 * size, size=2)
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        ry = dy * np.cos(theta) + dx * np.sin(theta)
        rx = -dy * np.sin(theta) + dx * np.cos(theta)
        mask |= (ry / ay) ** 2 + (rx / ax) ** 2 <= 1.0
    return mask


def gen_synthetic(seed: int, n: int, size: int, in_channels: int = 1,
                  contrast: float = 0.4, blur: float = 1.0,
                  noise: float = 0.15, area_band=AREA_BAND) -> list[SegSample]:
    if not 0 < contrast <= 1:
        raise ConfigError(f"contrast must be in (0, 1], got {contrast}")
    if noise >= contrast / 2:
        raise ConfigError(f"noise {noise} must stay below contrast/2 = {contrast / 2}")
    rng = np.random.default_rng(seed)
    bg = 0.5 - contrast / 2
    fg = 0.5 + contrast / 2
    samples = []
    for _ in range(n):
        for _attempt in range(200):
            mask = _ellipse_mask(size, rng)
            frac = mask.mean()
            if area_band[0] <= frac <= area_band[1]:
                break
        else:
            raise ConfigError(f"could not draw a mask inside area band {area_band}")
        soft = gaussian_filter(mask.astype(np.float64), blur) if blur > 0 else mask.astype(np.float64)
        base = bg + (fg - bg) * soft
        image = np.stack([
            base + noise * rng.uniform(-1.0, 1.0, size=(size, size))
            for _ in range(in_channels)
        ])
        samples.append(SegSample(image=image.astype(np.float32),
                                 mask=mask.astype(np.float32)))
    return samples


def save_samples(directory, samples: list[SegSample]) -> None:
    tensors = {}
    for i, s in enumerate(samples):
        tensors[f"{i:04d}.image"] = s.image
        tensors[f"{i:04d}.mask"] = s.mask
    cio.save_checkpoint(directory, tensors)


def load_samples(directory) -> list[SegSample]:
    loaded = cio.load_checkpoint(directory)
    indices = sorted({name.split(".")[0] for name in loaded})
    samples = []
    for idx in indices:
        try:
            samples.append(SegSample(image=loaded[f"{idx}.image"], mask=loaded[f"{idx}.mask"]))
        except KeyError as exc:
            raise ConfigError(f"{directory}: sample {idx} incomplete") from exc
    return samples
