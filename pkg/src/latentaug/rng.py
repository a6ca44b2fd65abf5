"""Named, counter-based random streams derived from one master seed.

Every consumer asks for ``stream(seed, name)`` with a stable name such as
``"vae/1"`` or ``"split"``. Streams use the Philox counter-based generator,
so the draws of one stream never depend on how many draws another stream made
or on the order in which concurrent tasks were scheduled.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, name: str) -> np.ndarray:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode("utf-8")).digest()
    return np.frombuffer(digest[:16], dtype="<u8").copy()


def stream(seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for ``(seed, name)``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, name)))
