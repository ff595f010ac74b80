"""Seeded pseudorandom stream used for splits, schedules and initialisation.

The generator is xorshift64* (shifts 12, 25, 27; output multiplier
0x2545F4914F6CDD1D). The 64-bit state is derived from ``(seed, stream)`` by
one SplitMix64 step applied to ``seed + stream * 0x9E3779B97F4A7C15``
(mod 2**64); a zero state is replaced by the golden-ratio constant.

Derived quantities:

* uniform double in [0, 1): ``(u >> 11) * 2**-53``
* permutation: Fisher-Yates from the last index down, ``j = u % (i + 1)``
* normals: Box-Muller on consecutive draw pairs ``(u1, u2)``;
  ``r = sqrt(-2 ln(((u1 >> 11) + 1) * 2**-53))``, ``theta = 2 pi (u2 >> 11) 2**-53``,
  emitting ``r cos theta`` then ``r sin theta``.
"""
import numpy as np

from . import kernels

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_TWO_M53 = 2.0**-53

# stream ids, so a single user seed feeds independent sequences
STREAM_SPLIT = 0
STREAM_INIT = 1
STREAM_SCHEDULE = 2


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Xorshift64Star:
    def __init__(self, seed: int, stream: int = 0, backend=None):
        state = splitmix64((int(seed) + int(stream) * GOLDEN) & MASK64)
        self.state = np.uint64(state or GOLDEN)
        self._kern = backend or kernels.ACTIVE

    def next_u64(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty(0, dtype=np.uint64)
        out, self.state = self._kern.xorshift_fill(self.state, int(n))
        self.state = np.uint64(self.state)
        return out

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        raw = (self.next_u64(2 * pairs) >> np.uint64(11)).astype(np.float64)
        u1 = (raw[0::2] + 1.0) * _TWO_M53
        u2 = raw[1::2] * _TWO_M53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        draws = self.next_u64(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(draws[k]) % (i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
