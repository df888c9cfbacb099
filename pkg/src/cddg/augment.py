"""Batched image augmentation for channels-last tensors in [0, 1].

Random parameters are drawn from a caller-supplied numpy Generator, so the
output depends only on the generator state and never on torch's global RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

_LUMA = torch.tensor([0.299, 0.587, 0.114])
_RGB_TO_YIQ = torch.tensor([[0.299, 0.587, 0.114],
                            [0.596, -0.274, -0.322],
                            [0.211, -0.523, 0.312]])
_YIQ_TO_RGB = torch.linalg.inv(_RGB_TO_YIQ)


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    crop_scale: tuple[float, float] = (0.6, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    flip_prob: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2
    # leave the second view un-augmented (one view is the identity)
    identity_second_view: bool = False

    def __post_init__(self):
        object.__setattr__(self, "crop_scale", tuple(float(v) for v in self.crop_scale))
        object.__setattr__(self, "crop_ratio", tuple(float(v) for v in self.crop_ratio))
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        for name in ("flip_prob", "grayscale_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


def _gray(x: torch.Tensor) -> torch.Tensor:
    return (x * _LUMA.to(x.dtype)).sum(dim=-1, keepdim=True)


def _per_sample(values, x):
    return torch.as_tensor(values, dtype=x.dtype).view(-1, 1, 1, 1)


def random_resized_crop(x: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig) -> torch.Tensor:
    b = x.shape[0]
    area = rng.uniform(*cfg.crop_scale, size=b)
    log_ratio = rng.uniform(math.log(cfg.crop_ratio[0]), math.log(cfg.crop_ratio[1]), size=b)
    ratio = np.exp(log_ratio)
    w = np.minimum(np.sqrt(area * ratio), 1.0)
    h = np.minimum(np.sqrt(area / ratio), 1.0)
    cx = rng.uniform(-1, 1, size=b) * (1 - w)
    cy = rng.uniform(-1, 1, size=b) * (1 - h)
    flip = np.where(rng.uniform(size=b) < cfg.flip_prob, -1.0, 1.0)
    theta = np.zeros((b, 2, 3))
    theta[:, 0, 0] = w * flip
    theta[:, 0, 2] = cx
    theta[:, 1, 1] = h
    theta[:, 1, 2] = cy
    theta = torch.as_tensor(theta, dtype=x.dtype)
    nchw = x.permute(0, 3, 1, 2)
    grid = F.affine_grid(theta, list(nchw.shape), align_corners=False)
    out = F.grid_sample(nchw, grid, mode="bilinear", padding_mode="border", align_corners=False)
    return out.permute(0, 2, 3, 1)


def color_jitter(x: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig) -> torch.Tensor:
    b = x.shape[0]
    factors = {name: rng.uniform(1 - s, 1 + s, size=b)
               for name, s in (("brightness", cfg.brightness), ("contrast", cfg.contrast),
                               ("saturation", cfg.saturation))}
    hue = rng.uniform(-cfg.hue, cfg.hue, size=b)

    x = (x * _per_sample(factors["brightness"], x)).clamp(0, 1)
    mean = _gray(x).mean(dim=(1, 2, 3), keepdim=True)
    x = ((x - mean) * _per_sample(factors["contrast"], x) + mean).clamp(0, 1)
    g = _gray(x)
    x = ((x - g) * _per_sample(factors["saturation"], x) + g).clamp(0, 1)
    if cfg.hue > 0:
        # rotate chroma in YIQ space
        yiq = x @ _RGB_TO_YIQ.T.to(x.dtype)
        angle = torch.as_tensor(hue * 2 * math.pi, dtype=x.dtype).view(-1, 1, 1)
        cos, sin = torch.cos(angle), torch.sin(angle)
        i, q = yiq[..., 1], yiq[..., 2]
        yiq = torch.stack([yiq[..., 0], cos * i - sin * q, sin * i + cos * q], dim=-1)
        x = (yiq @ _YIQ_TO_RGB.T.to(x.dtype)).clamp(0, 1)
    return x


def random_grayscale(x: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig) -> torch.Tensor:
    pick = torch.as_tensor(rng.uniform(size=x.shape[0]) < cfg.grayscale_prob).view(-1, 1, 1, 1)
    return torch.where(pick, _gray(x).expand_as(x), x)


def augment(x: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig) -> torch.Tensor:
    if not cfg.enabled:
        return x.clone()
    x = random_resized_crop(x, rng, cfg)
    x = color_jitter(x, rng, cfg)
    return random_grayscale(x, rng, cfg)


def two_views(x: torch.Tensor, rng: np.random.Generator, cfg: AugmentConfig) -> torch.Tensor:
    first = augment(x, rng, cfg)
    second = x.clone() if cfg.identity_second_view else augment(x, rng, cfg)
    return torch.cat([first, second], dim=0)
