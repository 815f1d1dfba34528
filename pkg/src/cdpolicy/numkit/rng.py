"""Named, splittable random streams on top of the counter-based Philox generator."""

from __future__ import annotations

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``.

    The same seed and path always give the same stream; different paths are
    statistically independent.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))



def normal(rng, batch: int, shape) -> np.ndarray:
    """Standard normals of shape (batch, *shape).

    ``rng`` is one generator for the whole batch or a sequence of per-row
    generators, so each episode can own its own stream.
    """
    shape = tuple(shape)
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((batch,) + shape)
    if len(rng) != batch:
        raise ValueError(f"expected {batch} row generators, got {len(rng)}")
    return np.stack([g.standard_normal(shape) for g in rng])
