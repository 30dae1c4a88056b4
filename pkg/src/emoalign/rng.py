"""Deterministic, platform-independent random number generation.

Two primitives, both operating on 64-bit unsigned integer state:

* ``splitmix64`` -- a counter-based mixer.  Output ``k`` of a stream seeded
  with ``s`` is ``mix64(s + (k+1) * GOLDEN)``, so arbitrary outputs can be
  computed independently.  Used to derive per-record and per-component seeds.
* ``Xoshiro256StarStar`` -- the xoshiro256** generator, run as ``LANES``
  parallel streams stepped in lockstep so bulk draws vectorize in numpy.
  Draw order is documented and fixed: block-major, lane-minor (block ``b``
  contributes outputs ``b*LANES .. b*LANES+LANES-1``).

All arithmetic is exact uint64, so any two platforms produce identical
integer streams.  Floating-point conversion uses the standard 53-bit
``(x >> 11) * 2**-53`` mapping.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MASK = 0xFFFFFFFFFFFFFFFF

# Number of parallel xoshiro lanes.  Part of the documented draw order:
# changing it changes every stream.
LANES = 1024


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def splitmix64(seed: int, k: int) -> int:
    """The k-th output (0-based) of a splitmix64 stream seeded with ``seed``."""
    return mix64((seed + (k + 1) * 0x9E3779B97F4A7C15) & _MASK)


def derive_seed(seed: int, *indices: int) -> int:
    """Fold ``indices`` into ``seed`` one splitmix64 step at a time.

    Used to give every record / component / epoch its own independent stream
    without any sequential dependence on the others.
    """
    s = seed & _MASK
    for ix in indices:
        s = splitmix64(s, ix)
    return s


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Xoshiro256StarStar:
    """Vectorized xoshiro256** with a fixed number of lockstep lanes.

    Lane ``j`` is seeded from four consecutive splitmix64 outputs of the
    sub-seed ``splitmix64(seed, j)``, so lanes are mutually independent.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        lanes = np.arange(LANES, dtype=np.uint64)
        sub = (np.uint64(self.seed) + (lanes + np.uint64(1)) * _GOLDEN).astype(np.uint64)
        sub = self._mix(sub)
        state = []
        for k in range(4):
            off = np.uint64(((k + 1) * int(_GOLDEN)) & _MASK)  # wrap in python ints, numpy warns on scalar overflow
            state.append(self._mix(sub + off))
        self._s = state  # four uint64 arrays of length LANES
        self._buf = np.empty(0, dtype=np.uint64)

    @staticmethod
    def _mix(z: np.ndarray) -> np.ndarray:
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def _next_block(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        out = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out

    def integers(self, n: int) -> np.ndarray:
        """Next ``n`` raw uint64 outputs in documented order."""
        chunks = [self._buf]
        have = len(self._buf)
        while have < n:
            block = self._next_block()
            chunks.append(block)
            have += LANES
        flat = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
        out, self._buf = flat[:n], flat[n:]
        return out.copy()

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1)."""
        return (self.integers(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_range(self, lo: float, hi: float, n: int) -> np.ndarray:
        return lo + (hi - lo) * self.uniform(n)

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        """n standard-normal draws via Box-Muller (consumes 2*ceil(n/2) uniforms)."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        # guard log(0); u1 == 0 has probability 2**-53 per draw
        r = np.sqrt(-2.0 * np.log(np.maximum(u1, 2.0**-53)))
        out = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return sigma * out[:n]

    def shuffle(self, n: int) -> np.ndarray:
        """A permutation of range(n) by Fisher-Yates over xoshiro draws."""
        perm = np.arange(n)
        if n < 2:
            return perm
        raw = self.integers(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(raw[n - 1 - i] % np.uint64(i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm
