"""Seed expansion and deterministic-mode helpers.

A run is driven by one integer seed. Every component that needs randomness
asks for its own child seed by name::

    child = derive_seed(seed, "stage1", "pairs", epoch)

The child is the first 32-bit word of ``numpy.random.SeedSequence`` built from
``[seed, crc32(tag_0), crc32(tag_1), ...]`` (integers are used as-is), so the
mapping is stable across processes and Python versions.
"""

from __future__ import annotations

import zlib

import numpy as np
import torch


def _entropy(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_seed(seed: int, *tags) -> int:
    """Child seed for the component named by ``tags``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_entropy(t) for t in tags)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags))


def torch_generator(seed: int, *tags) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(derive_seed(seed, *tags))
    return g


def set_deterministic(enabled: bool = True) -> None:
    """Force single-threaded, deterministic torch kernels."""
    if enabled:
        torch.set_num_threads(1)
    torch.use_deterministic_algorithms(enabled)
