"""Counter-addressed random streams built on numpy's Philox bit generator.

A stream is identified by ``(seed, block, step, tag)``: the seed is the
Philox key and the other three occupy the upper counter words, so the
generator's own increments (which touch only the lowest word) never reach a
neighbouring stream.  Particle ``i`` reads its draws from block
``i // BLOCK`` at offset ``i % BLOCK``; because blocks are fixed-size, the
numbers a particle sees do not depend on how work is split across threads.
"""
from __future__ import annotations

import numpy as np

BLOCK = 8192
_MASK64 = (1 << 64) - 1

# distinct purposes draw from disjoint streams
TAG_NOISE = 1
TAG_SAMPLE = 2
TAG_KERNEL = 3
TAG_POLICY = 4
TAG_SITE = 5


def generator(seed: int, block: int, step: int, tag: int) -> np.random.Generator:
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    bitgen = np.random.Philox(key=[seed & _MASK64, (seed >> 64) & _MASK64],
                              counter=[0, int(block), int(step), int(tag)])
    return np.random.Generator(bitgen)


def _draw(kind: str, seed: int, start: int, stop: int, step: int, tag: int, width: int) -> np.ndarray:
    if stop <= start:
        return np.empty((0, width))
    parts = []
    for block in range(start // BLOCK, (stop - 1) // BLOCK + 1):
        gen = generator(seed, block, step, tag)
        if kind == "normal":
            vals = gen.standard_normal((BLOCK, width))
        else:
            vals = gen.random((BLOCK, width))
        lo = max(start - block * BLOCK, 0)
        hi = min(stop - block * BLOCK, BLOCK)
        parts.append(vals[lo:hi])
    return np.concatenate(parts)


def normals(seed: int, start: int, stop: int, step: int, tag: int, width: int = 1) -> np.ndarray:
    """Standard normals for streams ``start..stop-1``; shape ``(stop-start, width)``."""
    return _draw("normal", seed, start, stop, step, tag, width)


def uniforms(seed: int, start: int, stop: int, step: int, tag: int, width: int = 1) -> np.ndarray:
    """Uniforms on [0, 1) for streams ``start..stop-1``; shape ``(stop-start, width)``."""
    return _draw("uniform", seed, start, stop, step, tag, width)
