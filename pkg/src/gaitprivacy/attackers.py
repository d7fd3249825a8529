"""Gender and activity inference networks used to measure attribute leakage."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .data import N_CHANNELS, WINDOW_LEN
from .verifier import BuildError, ShapeError, _as_tensor

GENDER_CLASSES = 2
ACTIVITY_CLASSES = 4

LAYERS = ("Conv1_1", "Conv1_2", "Batch_1", "Pool_1", "Drop_1",
          "Conv2_1", "Batch_2", "Pool_2", "Drop_2",
          "Dense_1", "Batch_3", "Drop_3", "Dense_2")


@dataclass(frozen=True)
class AttackerConfig:
    n_classes: int = GENDER_CLASSES
    input_shape: tuple[int, int] = (N_CHANNELS, WINDOW_LEN)
    dropout_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.n_classes < 2:
            raise BuildError(f"Dense_2: n_classes must be >= 2, got {self.n_classes}")
        if not 0 <= self.dropout_prob < 1:
            raise BuildError(f"Drop: dropout_prob must be in [0, 1), got {self.dropout_prob}")

    @property
    def binary(self) -> bool:
        return self.n_classes == 2


class AttributeAttacker(nn.Module):
    """Two conv blocks and two dense layers. ``forward`` returns logits."""

    def __init__(self, config: AttackerConfig = AttackerConfig()):
        super().__init__()
        self.config = config
        m, t = config.input_shape
        p = config.dropout_prob
        self.conv1_1 = nn.Conv2d(1, 16, (1, 3))
        self.conv1_2 = nn.Conv2d(16, 16, (1, 3))
        self.batch_1 = nn.BatchNorm2d(16)
        self.pool_1 = nn.MaxPool2d((1, 2))
        self.drop_1 = nn.Dropout(p)
        self.conv2_1 = nn.Conv2d(16, 32, (1, 5))
        self.batch_2 = nn.BatchNorm2d(32)
        self.pool_2 = nn.MaxPool2d((1, 2))
        self.drop_2 = nn.Dropout(p)
        w = ((t - 4) // 2 - 4) // 2
        if w < 1:
            raise BuildError(f"Pool_2: time width collapses to {w} for input width {t}")
        self.dense_1 = nn.Linear(32 * m * w, 100)
        self.batch_3 = nn.BatchNorm1d(100)
        self.drop_3 = nn.Dropout(p)
        self.dense_2 = nn.Linear(100, config.n_classes)

    def _stages(self):
        relu = torch.relu
        return (
            ("Conv1_1", lambda h: relu(self.conv1_1(h))),
            ("Conv1_2", lambda h: relu(self.conv1_2(h))),
            ("Batch_1", self.batch_1),
            ("Pool_1", self.pool_1),
            ("Drop_1", self.drop_1),
            ("Conv2_1", lambda h: relu(self.conv2_1(h))),
            ("Batch_2", self.batch_2),
            ("Pool_2", self.pool_2),
            ("Drop_2", self.drop_2),
            ("Dense_1", lambda h: relu(self.dense_1(h.flatten(1)))),
            ("Batch_3", self.batch_3),
            ("Drop_3", self.drop_3),
            ("Dense_2", self.dense_2),
        )

    def _input(self, x):
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.dim() != 3 or tuple(x.shape[1:]) != self.config.input_shape:
            raise ShapeError(f"expected input (B, {self.config.input_shape[0]}, {self.config.input_shape[1]}), "
                             f"got {tuple(x.shape)}")
        return x.unsqueeze(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self._input(x)
        for _, stage in self._stages():
            h = stage(h)
        return h

    def probabilities(self, logits: torch.Tensor) -> torch.Tensor:
        """Gender: P(female) as a scalar per row; otherwise the softmax vector."""
        if self.config.binary:
            return torch.sigmoid(logits[:, 1] - logits[:, 0])
        return torch.softmax(logits, dim=1)

    @torch.no_grad()
    def shape_trace(self) -> dict[str, tuple[tuple[int, ...], tuple[int, ...]]]:
        """``{layer: (input_size, output_size)}`` in H x W x F order for one window."""
        was = self.training
        self.eval()
        try:
            h = self._input(torch.zeros((1, *self.config.input_shape)))
            trace = {}
            for name, stage in self._stages():
                out = stage(h)
                trace[name] = (_hwf(h), _hwf(out))
                h = out
            return trace
        finally:
            self.train(was)


def _hwf(t: torch.Tensor) -> tuple[int, ...]:
    if t.dim() == 4:
        _, f, h, w = t.shape
        return (h, w, f)
    return tuple(t.shape[1:])


def build_attacker(config: AttackerConfig = AttackerConfig(), seed: int = 0) -> AttributeAttacker:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = AttributeAttacker(config)
    trace = model.shape_trace()
    if trace["Dense_2"][1] != (config.n_classes,):
        raise BuildError(f"Dense_2: output {trace['Dense_2'][1]} != ({config.n_classes},)")
    return model


@torch.no_grad()
def predict(model: AttributeAttacker, window) -> torch.Tensor:
    was = model.training
    model.eval()
    try:
        x = _as_tensor(window)
        probs = model.probabilities(model(x))
        return probs[0] if x.dim() == 2 else probs
    finally:
        model.train(was)
