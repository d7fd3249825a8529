"""Single-file model checkpoints.

A checkpoint is a ``torch.save`` dict::

    {"format_version": 1, "kind": "verifier" | "privatizer" | "attacker",
     "config": {...}, "stage": str, "seed": int, "metadata": {...},
     "state": {name: tensor}}

``state`` includes buffers (batch-norm running statistics), so a loaded model
reproduces forward outputs bit-exactly.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict
from pathlib import Path

import torch

from .attackers import AttackerConfig, AttributeAttacker
from .privatizer import AutoencoderConfig, Privatizer
from .verifier import GaitVerifier, VerifierConfig

FORMAT_VERSION = 1

_KINDS = {
    "verifier": (GaitVerifier, VerifierConfig),
    "privatizer": (Privatizer, AutoencoderConfig),
    "attacker": (AttributeAttacker, AttackerConfig),
}


class CheckpointError(RuntimeError):
    pass


def _kind(model) -> str:
    for kind, (cls, _) in _KINDS.items():
        if isinstance(model, cls):
            return kind
    raise CheckpointError(f"unsupported model type {type(model).__name__}")


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def save_checkpoint(path, model, stage: str, seed: int, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": _kind(model),
        "config": _plain(asdict(model.config)),
        "stage": stage,
        "seed": int(seed),
        "frozen": bool(getattr(model, "frozen", False)),
        "metadata": metadata or {},
        "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def read_checkpoint(path) -> dict:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {payload.get('format_version')!r}")
    return payload


def load_checkpoint(path, expect: str | None = None):
    """Rebuild the stored model; returns ``(model, payload)``."""
    payload = read_checkpoint(path)
    kind = payload["kind"]
    if expect is not None and kind != expect:
        raise CheckpointError(f"{path}: expected a {expect} checkpoint, found {kind}")
    cls, cfg_cls = _KINDS[kind]
    config = cfg_cls(**payload["config"])
    model = cls(config)
    model.load_state_dict(payload["state"])
    if payload.get("frozen"):
        model.freeze()
    else:
        model.eval()
    return model, payload


def parameter_checksum(model) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order."""
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().contiguous().cpu().numpy().tobytes())
    return h.hexdigest()
