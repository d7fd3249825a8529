"""Task, content and style losses and their weighted combination.

All functions accept numpy arrays or torch tensors and stay differentiable
for tensors. Feature maps are ``(C, H, W)`` or batched ``(B, C, H, W)``;
batched losses are averaged over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .data import N_CHANNELS, WINDOW_LEN
from .seeding import rng

EPS = 1e-7
NOISE_BOUND = 20.0


class LossError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise LossError(f"{name} must be a finite non-negative number, got {v}")
        total = self.alpha + self.beta + self.gamma
        if abs(total - 1.0) > 1e-9:
            raise LossError(f"alpha + beta + gamma must equal 1, got "
                            f"{self.alpha} + {self.beta} + {self.gamma} = {total:g}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)


def _t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def task_loss(label, predicted_prob, eps: float = EPS) -> torch.Tensor:
    """Binary cross-entropy, mean over the batch, with probabilities clamped
    to ``[eps, 1 - eps]``."""
    p = _t(predicted_prob)
    y = _t(label).to(p.dtype)
    if not torch.all((y == 0) | (y == 1)):
        raise LossError("labels must be 0 or 1")
    if y.shape != p.shape:
        raise LossError(f"label shape {tuple(y.shape)} != prediction shape {tuple(p.shape)}")
    p = p.clamp(eps, 1 - eps)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def _check_pair(a, b, what):
    if a.shape != b.shape:
        raise LossError(f"{what}: feature map shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() not in (3, 4):
        raise LossError(f"{what}: expected (C, H, W) or (B, C, H, W), got {tuple(a.shape)}")


def content_loss(fmap_raw, fmap_transformed) -> torch.Tensor:
    """Mean squared difference over all ``C*H*W`` entries (batch-averaged)."""
    a, b = _t(fmap_raw), _t(fmap_transformed)
    _check_pair(a, b, "content_loss")
    return ((b - a) ** 2).mean()


def gram(fmap) -> torch.Tensor:
    """``G[c, c'] = sum_hw f[c,h,w] f[c',h,w] / (C*H*W)``."""
    f = _t(fmap)
    if f.dim() not in (3, 4):
        raise LossError(f"gram: expected (C, H, W) or (B, C, H, W), got {tuple(f.shape)}")
    c, h, w = f.shape[-3:]
    flat = f.reshape(*f.shape[:-3], c, h * w)
    return flat @ flat.transpose(-1, -2) / (c * h * w)


def style_loss(fmap_transformed, fmap_noise) -> torch.Tensor:
    """Squared Frobenius distance between Gram matrices (batch-averaged)."""
    a, b = _t(fmap_transformed), _t(fmap_noise)
    _check_pair(a, b, "style_loss")
    return gram_distance(gram(a), gram(b))


def gram_distance(ga, gb) -> torch.Tensor:
    d = (_t(ga) - _t(gb)) ** 2
    return d.sum(dim=(-1, -2)).mean()


def total_loss(weights: LossWeights, l_task, l_content, l_style):
    for name, v in (("task", l_task), ("content", l_content), ("style", l_style)):
        finite = bool(torch.isfinite(v).all()) if isinstance(v, torch.Tensor) else math.isfinite(v)
        if not finite:
            raise NonFiniteLossError(f"{name} loss is not finite: {v}")
    return weights.alpha * l_task + weights.beta * l_content + weights.gamma * l_style


def sample_noise(shape=(N_CHANNELS, WINDOW_LEN), seed: int = 0, bound: float = NOISE_BOUND) -> np.ndarray:
    """I.i.d. uniform noise on ``[-bound, bound]``."""
    return rng(seed, "noise").uniform(-bound, bound, size=shape)


def noise_like(x: torch.Tensor, generator: torch.Generator, bound: float = NOISE_BOUND) -> torch.Tensor:
    """Fresh uniform noise shaped like ``x`` (one sample per batch row)."""
    u = torch.rand(x.shape, generator=generator, dtype=x.dtype)
    return (2 * u - 1) * bound
