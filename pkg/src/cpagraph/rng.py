"""Named, splittable random streams.

Every random draw in the package goes through :func:`stream`, which keys a
counter-based Philox generator by ``(seed, *names)``.  Two calls with the same
key always yield identical sequences, regardless of what else has been drawn.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(seed: int, names: tuple) -> int:
    text = "\x1f".join([str(int(seed))] + [str(n) for n in names])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stream(seed: int, *names) -> np.random.Generator:
    """Return a fresh generator for the stream named ``names`` under ``seed``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, names)))


def child_seed(seed: int, *names) -> int:
    """Derive a 63-bit integer seed for a named sub-stream."""
    return _key(seed, names) & ((1 << 63) - 1)
