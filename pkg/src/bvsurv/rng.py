"""Named random streams.

Every random draw in the package comes from a counter-based Philox
generator keyed by ``(seed, purpose, index...)``. Streams for different
replicates or chains are independent, and a given stream yields the same
numbers no matter how work is split across processes.
"""

from __future__ import annotations

import zlib

import numpy as np

_PURPOSES: dict[str, int] = {}


def _purpose_code(purpose: str) -> int:
    if purpose not in _PURPOSES:
        _PURPOSES[purpose] = zlib.crc32(purpose.encode("utf-8"))
    return _PURPOSES[purpose]


def seed_sequence(seed: int, purpose: str, *index: int) -> np.random.SeedSequence:
    """Seed sequence for stream ``purpose`` and sub-stream ``index``."""
    key = (_purpose_code(purpose),) + tuple(int(i) for i in index)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def generator(seed) -> np.random.Generator:
    """Philox-backed generator from a seed sequence or an integer seed."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    return generator(seed_sequence(seed, purpose, *index))
