"""Seeded, counter-based random streams.

All randomness flows through numpy's Philox4x32-10 bit generator, which is a
counter-based design with a fixed, platform-independent output sequence.
Child streams are derived by hashing a tuple of integers/strings into the
Philox key, so the stream for e.g. ``(seed, "train", 17)`` never depends on
how many draws other streams consumed.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key(*parts) -> int:
    h = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:16], "little")


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Generator for ``seed`` and an optional stream path."""
    return np.random.Generator(np.random.Philox(key=_key(int(seed), *stream)))


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def bias_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
