"""Counter-based splitmix64 generator with labeled substreams.

Draw ``k`` (1-based) of a stream with key ``s`` is ``mix(s + k * GOLDEN)``, where
``mix`` is the splitmix64 finalizer.  ``child(label)`` keys a new stream by
``mix(s ^ fnv1a64(label))`` so substreams depend only on the parent key and the
label, never on how many draws were taken elsewhere.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


class Rng64:
    def __init__(self, seed: int):
        self.key = int(seed) & _MASK
        self.counter = 0

    def child(self, label: str) -> "Rng64":
        mixed = _mix(np.array([self.key ^ fnv1a64(label)], dtype=np.uint64))[0]
        return Rng64(int(mixed))

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.key) + steps * GOLDEN)

    def uniform(self, shape) -> np.ndarray:
        """Doubles in [0, 1) with 53 random bits."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0**-53).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform(2 * n)
        u1 = 1.0 - u[:n]  # (0, 1]
        u2 = u[n:]
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")
