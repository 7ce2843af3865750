"""Deterministic random source shared by the simulator and the fitting code.

All randomness flows through :class:`RandomSource`, a thin wrapper around
numpy's counter-based Philox bit generator.  Substreams are derived from
``(seed, spawn_key)`` so that per-entity streams (one per student, for
example) are independent and reproducible regardless of evaluation order.
"""

from dataclasses import dataclass

import numpy as np

#: The only supported bit generator.  Philox is counter-based, so the raw
#: stream is a pure function of (key, counter) and identical on every
#: platform that implements the algorithm.
ALGORITHM = "philox4x64-10"

# Fixed substream labels.  (label,) or (label, entity_id) spawn keys.
STREAM_STUDENTS = 0
STREAM_ITEMS = 1
STREAM_ATTEMPTS = 2
STREAM_FIT_INIT = 3


@dataclass(frozen=True)
class RandomSource:
    """Seed plus algorithm identifier; hands out named substreams."""

    seed: int
    algorithm: str = ALGORITHM

    def __post_init__(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported rng algorithm {self.algorithm!r} (expected {ALGORITHM!r})")

    def generator(self, *key: int) -> np.random.Generator:
        """Generator for substream ``key``; the empty key is the root stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(key))
        return np.random.Generator(np.random.Philox(ss))
