"""Counter-based random streams keyed directly on integer seeds."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def stream(seed: int, sub: int = 0) -> np.random.Generator:
    """Philox generator whose 128-bit key is the pair ``(seed, sub)``.

    Distinct keys give structurally independent streams; no hashing or
    seed-sequence mixing sits between the integers and the generator.
    """
    if seed < 0 or sub < 0:
        raise ValueError("stream keys must be non-negative")
    key = np.array([seed & _MASK, sub & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
