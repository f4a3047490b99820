"""Counter-based noise streams.

Every Monte-Carlo draw in this package is addressed by ``(seed, index)``: the
stream for a given index is generated by its own Philox counter block, so the
same seed reproduces bit-identical samples no matter how work is chunked
across processes or threads.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _philox_key(seed: int) -> np.ndarray:
    seed = int(seed) & ((1 << 128) - 1)
    return np.array([seed & _MASK64, (seed >> 64) & _MASK64], dtype=np.uint64)


def generator_for(seed: int, index: int) -> np.random.Generator:
    """Generator for stream ``index`` of the family keyed by ``seed``.

    Streams for distinct indices occupy disjoint counter ranges (the index
    is placed in the most significant counter word), so they never overlap.
    """
    counter = np.array([0, 0, 0, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_philox_key(seed), counter=counter))


def normal_stream(seed: int, index: int, size) -> np.ndarray:
    """Standard normal draws for stream ``(seed, index)``."""
    return generator_for(seed, index).standard_normal(size)
