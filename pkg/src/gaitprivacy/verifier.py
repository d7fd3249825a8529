"""Siamese CNN-BiLSTM gait verifier.

Windows ``(B, 6, T)`` gain a unit filter axis and pass through three 1x3
valid convolutions (Conv1_1, Conv2_1, Conv3_1) with ReLU, then one
batch-norm / 1x2 max-pool / dropout block. The pooled map ``(B, F3, 6, T')``
is read as a ``T'``-step sequence of ``F3 * 6`` features for a bidirectional
LSTM; the two final hidden states feed a 400-unit sigmoid embedding. A pair
is scored by a single sigmoid unit over ``|e_a - e_b|``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .data import N_CHANNELS, WINDOW_LEN

TAPS = ("Conv1_1", "Conv2_1", "Conv3_1")
CONTENT_TAP = "Conv3_1"
STYLE_TAP = "Conv2_1"


class BuildError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class VerifierConfig:
    input_shape: tuple[int, int] = (N_CHANNELS, WINDOW_LEN)
    conv_filter_counts: tuple[int, int, int] = (16, 32, 64)
    kernel: int = 3
    pool: int = 2
    dropout_prob: float = 0.5
    lstm_units: int = 50
    embedding_dim: int = 400

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_filter_counts", tuple(int(v) for v in self.conv_filter_counts))

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Per-layer output shapes (without batch axis) for one input window."""
        h, w = self.input_shape
        shapes: dict[str, tuple[int, ...]] = {"Input": (1, h, w)}
        if len(self.conv_filter_counts) != 3:
            raise BuildError(f"Conv: need exactly 3 filter counts, got {self.conv_filter_counts}")
        for name, f in zip(TAPS, self.conv_filter_counts):
            if f < 1:
                raise BuildError(f"{name}: filter count must be positive, got {f}")
            w = w - self.kernel + 1
            if w < 1:
                raise BuildError(f"{name}: time width collapses to {w}")
            shapes[name] = (f, h, w)
        shapes["Batch"] = shapes[TAPS[-1]]
        w = w // self.pool
        if w < 1:
            raise BuildError(f"Pool: time width collapses to {w}")
        f3 = self.conv_filter_counts[-1]
        shapes["Pool"] = (f3, h, w)
        shapes["Reshape"] = (w, f3 * h)
        shapes["BiLSTM"] = (2 * self.lstm_units,)
        shapes["Dense"] = (self.embedding_dim,)
        shapes["Head"] = (1,)
        return shapes


class GaitVerifier(nn.Module):
    def __init__(self, config: VerifierConfig = VerifierConfig()):
        super().__init__()
        if not 0 <= config.dropout_prob < 1:
            raise BuildError(f"Drop: dropout_prob must be in [0, 1), got {config.dropout_prob}")
        self.config = config
        self.shapes = config.layer_shapes()
        f1, f2, f3 = config.conv_filter_counts
        k = (1, config.kernel)
        self.conv1_1 = nn.Conv2d(1, f1, k)
        self.conv2_1 = nn.Conv2d(f1, f2, k)
        self.conv3_1 = nn.Conv2d(f2, f3, k)
        self.batch = nn.BatchNorm2d(f3)
        self.pool = nn.MaxPool2d((1, config.pool))
        self.drop = nn.Dropout(config.dropout_prob)
        self.lstm = nn.LSTM(f3 * config.input_shape[0], config.lstm_units, batch_first=True, bidirectional=True)
        self.dense = nn.Linear(2 * config.lstm_units, config.embedding_dim)
        self.head = nn.Linear(config.embedding_dim, 1)
        self.frozen = False

    def _check(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.dim() != 3 or tuple(x.shape[1:]) != self.config.input_shape:
            raise ShapeError(f"expected input (B, {self.config.input_shape[0]}, {self.config.input_shape[1]}), "
                             f"got {tuple(x.shape)}")
        return x.unsqueeze(1)

    def conv_features(self, x: torch.Tensor, upto: str = CONTENT_TAP) -> dict[str, torch.Tensor]:
        """Post-ReLU activations of the conv layers up to and including ``upto``."""
        if upto not in TAPS:
            raise KeyError(f"unknown tap {upto!r}; valid taps: {', '.join(TAPS)}")
        h = self._check(x)
        out = {}
        for name, conv in zip(TAPS, (self.conv1_1, self.conv2_1, self.conv3_1)):
            h = torch.relu(conv(h))
            out[name] = h
            if name == upto:
                break
        return out

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.embed_from_conv(self.conv_features(x, CONTENT_TAP)[CONTENT_TAP])

    def embed_from_conv(self, h: torch.Tensor) -> torch.Tensor:
        """Layers after Conv3_1: batch-norm, pool, dropout, BiLSTM, dense."""
        h = self.drop(self.pool(self.batch(h)))
        b, f, c, t = h.shape
        seq = h.permute(0, 3, 1, 2).reshape(b, t, f * c)
        _, (hn, _) = self.lstm(seq)
        last = torch.cat([hn[0], hn[1]], dim=1)
        return torch.sigmoid(self.dense(last))

    def score_embeddings(self, ea: torch.Tensor, eb: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.head((ea - eb).abs())).squeeze(-1)

    def forward(self, xa: torch.Tensor, xb: torch.Tensor) -> torch.Tensor:
        # one pass over the stacked pair keeps BN batch statistics shared by both branches
        n = xa.shape[0] if xa.dim() == 3 else 1
        e = self.embed(torch.cat([self._as3(xa), self._as3(xb)]))
        return self.score_embeddings(e[:n], e[n:])

    @staticmethod
    def _as3(x):
        return x.unsqueeze(0) if x.dim() == 2 else x

    def freeze(self) -> "GaitVerifier":
        self.frozen = True
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def train(self, mode: bool = True):
        # a frozen verifier never leaves inference mode, so BN running stats stay put
        return super().train(mode and not self.frozen)


def build_verifier(config: VerifierConfig = VerifierConfig(), seed: int = 0) -> GaitVerifier:
    """Seeded construction; layers use uniform fan-in initialisation."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = GaitVerifier(config)
    with torch.no_grad():
        probe = torch.zeros((1, *config.input_shape))
        model.eval()
        model.embed(probe)
        model.train()
    return model


def _as_tensor(window) -> torch.Tensor:
    values = window if isinstance(window, (torch.Tensor, np.ndarray)) else getattr(window, "values", window)
    return torch.as_tensor(values, dtype=torch.float32)


@torch.no_grad()
def embed(model: GaitVerifier, window) -> torch.Tensor:
    """Embedding of one window (or a batch) in inference mode."""
    x = _as_tensor(window)
    was = model.training
    model.eval()
    try:
        e = model.embed(x)
    finally:
        model.train(was)
    return e[0] if x.dim() == 2 else e


@torch.no_grad()
def score_pair(model: GaitVerifier, window_a, window_b) -> float:
    was = model.training
    model.eval()
    try:
        ea = model.embed(_as_tensor(window_a))
        eb = model.embed(_as_tensor(window_b))
        return float(model.score_embeddings(ea, eb)[0])
    finally:
        model.train(was)


@torch.no_grad()
def feature_map(model: GaitVerifier, window, tap: str = CONTENT_TAP) -> torch.Tensor:
    """``C x H x W`` activation map after the named conv's ReLU."""
    if tap not in ("Conv2_1", "Conv3_1"):
        raise KeyError(f"unknown tap {tap!r}; valid taps: Conv2_1, Conv3_1")
    x = _as_tensor(window)
    out = model.conv_features(x, tap)[tap]
    return out[0] if x.dim() == 2 else out


def config_dict(config: VerifierConfig) -> dict:
    return asdict(config)
