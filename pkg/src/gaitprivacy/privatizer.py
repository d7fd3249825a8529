"""Shared-weight convolutional autoencoder mapping X to X_hat.

Both Siamese branches are the same module, so ``transform_pair`` is just
one function applied twice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import N_CHANNELS, WINDOW_LEN
from .verifier import BuildError, ShapeError, _as_tensor


@dataclass(frozen=True)
class AutoencoderConfig:
    input_shape: tuple[int, int] = (N_CHANNELS, WINDOW_LEN)
    encoder_filter_counts: tuple[int, ...] = (32, 64)
    kernel: int = 3
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "encoder_filter_counts", tuple(int(v) for v in self.encoder_filter_counts))
        if self.kernel % 2 != 1:
            raise BuildError(f"kernel must be odd for same padding, got {self.kernel}")

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        h, w = self.input_shape
        shapes: dict[str, tuple[int, ...]] = {"Input": (1, h, w)}
        for i, f in enumerate(self.encoder_filter_counts, start=1):
            if f < 1:
                raise BuildError(f"Enc{i}: filter count must be positive, got {f}")
            if w % self.pool:
                raise BuildError(f"Enc{i}_pool: time width {w} not divisible by pool {self.pool}")
            w //= self.pool
            shapes[f"Enc{i}"] = (f, h, w)
        shapes["Bottleneck"] = shapes[f"Enc{len(self.encoder_filter_counts)}"]
        for i, f in enumerate(reversed(self.encoder_filter_counts), start=1):
            w *= self.pool
            shapes[f"Dec{i}"] = (f, h, w)
        shapes["Output"] = (1, h, w)
        if (h, w) != self.input_shape:
            raise BuildError(f"decoder output width {w} != input width {self.input_shape[1]}")
        return shapes


class Privatizer(nn.Module):
    def __init__(self, config: AutoencoderConfig = AutoencoderConfig()):
        super().__init__()
        self.config = config
        self.shapes = config.layer_shapes()
        k, p = (1, config.kernel), (0, config.kernel // 2)
        enc, prev = [], 1
        for f in config.encoder_filter_counts:
            enc += [nn.Conv2d(prev, f, k, padding=p), nn.ReLU(), nn.BatchNorm2d(f), nn.MaxPool2d((1, config.pool))]
            prev = f
        dec = []
        for f in reversed(config.encoder_filter_counts):
            dec += [nn.Upsample(scale_factor=(1, config.pool), mode="nearest"), nn.Conv2d(prev, f, k, padding=p), nn.ReLU()]
            prev = f
        self.encoder = nn.Sequential(*enc)
        self.decoder = nn.Sequential(*dec)
        self.output = nn.Conv2d(prev, 1, k, padding=p)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 3 or tuple(x.shape[1:]) != self.config.input_shape:
            raise ShapeError(f"expected input (B, {self.config.input_shape[0]}, {self.config.input_shape[1]}), "
                             f"got {tuple(x.shape)}")
        y = self.output(self.decoder(self.encoder(x.unsqueeze(1)))).squeeze(1)
        return y[0] if squeeze else y


def build_privatizer(config: AutoencoderConfig = AutoencoderConfig(), seed: int = 0) -> Privatizer:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Privatizer(config)
    with torch.no_grad():
        model.eval()
        out = model(torch.zeros((1, *config.input_shape)))
        model.train()
    if tuple(out.shape[1:]) != config.input_shape:
        raise BuildError(f"round-trip shape {tuple(out.shape[1:])} != input {config.input_shape}")
    return model


@torch.no_grad()
def transform(model: Privatizer, window) -> torch.Tensor:
    was = model.training
    model.eval()
    try:
        return model(_as_tensor(window))
    finally:
        model.train(was)


def transform_pair(model: Privatizer, window_e, window_t) -> tuple[torch.Tensor, torch.Tensor]:
    return transform(model, window_e), transform(model, window_t)


def transform_stream(model: Privatizer, stream):
    """Transform a whole (normalised) recording in consecutive non-overlapping
    windows. A ragged tail is covered by one extra window aligned to the end,
    of which only the not-yet-covered samples are kept."""
    width = model.config.input_shape[1]
    n = stream.length
    if n < width:
        raise ShapeError(f"stream {stream.subject_id!r} has {n} samples, need >= {width}")
    starts = list(range(0, n - width + 1, width))
    if starts[-1] + width < n:
        starts.append(n - width)
    windows = torch.as_tensor(np.stack([stream.channels[:, s:s + width] for s in starts]), dtype=torch.float32)
    out = transform(model, windows).numpy()
    channels = np.empty((stream.channels.shape[0], n), dtype=np.float32)
    # write back to front so that full windows win over the tail window
    for s, w in reversed(list(zip(starts, out))):
        channels[:, s:s + width] = w
    return stream.with_channels(channels)
