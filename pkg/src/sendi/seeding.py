"""Named random sub-streams derived from one global seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; identical (seed, name) pairs replay exactly."""
    return np.random.default_rng([int(seed), stream_key(name)])


def subseed(seed: int, name: str) -> int:
    """A 63-bit integer seed for components that take plain integers."""
    return int(substream(seed, name).integers(0, 2 ** 63 - 1))
