"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, module, *ids)``, so the
numbers an agent sees at a given frame do not depend on what else was drawn
before, or in which order or thread.
"""

from __future__ import annotations

import zlib

import numpy as np

MODULES = {"scenario": 1, "detector": 2, "flow": 3, "fp": 4, "experiment": 5}


def _key(module: str) -> int:
    if module in MODULES:
        return MODULES[module]
    return zlib.crc32(module.encode()) | (1 << 32)


def stream(seed: int, module: str, *ids: int) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF, _key(module)]
    words += [int(i) & 0xFFFFFFFFFFFFFFFF for i in ids]
    ss = np.random.SeedSequence(words)
    return np.random.Generator(np.random.Philox(ss))


def time_key(t: float) -> int:
    """Integer microsecond key for a timestamp."""
    return int(round(t * 1e6))
