"""Counter-based random streams.

Every uniform is a pure function of ``(root_seed, *coordinates)`` through a
chained SplitMix64 finalizer, so a trial's randomness does not depend on
which batch, chunk or worker simulates it.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 2.0**-53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_words(seed: int, *coords) -> np.ndarray:
    """64-bit hash of ``seed`` and broadcastable integer coordinate arrays."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        for k, c in enumerate(coords, start=1):
            c = np.asarray(c).astype(np.uint64)
            h = _mix(h ^ (c + _GOLDEN * np.uint64(k)))
    return np.asarray(h)


class CounterStream:
    """Uniforms in the open interval (0, 1) addressed by integer coordinates."""

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)

    def uniform(self, *coords) -> np.ndarray:
        h = hash_words(self.root_seed, *coords)
        return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53

    def generator(self, *coords) -> np.random.Generator:
        """A sequential numpy generator keyed by the coordinates."""
        key = int(hash_words(self.root_seed, *coords))
        return np.random.Generator(np.random.Philox(key=key))
