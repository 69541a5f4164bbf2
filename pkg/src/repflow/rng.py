"""Portable, splittable random streams.

Every stream is a Philox-4x64 counter-based generator keyed by a 64-bit
value derived from ``(root_seed, *names)`` with BLAKE2b.  Normals are drawn
with Box-Muller from the generator's raw 64-bit output so the bit pattern
of every draw is fixed across platforms and numpy versions.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi


def derive_seed(root: int, *names: object) -> int:
    """Derive a 64-bit child seed from a root seed and a path of names."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(root & _MASK64).to_bytes(8, "little"))
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


class Stream:
    """A named random stream with portable uniform and normal draws."""

    def __init__(self, seed: int, *names: object):
        key = derive_seed(seed, *names) if names else int(seed) & _MASK64
        self.seed = key
        self._bits = np.random.Philox(key=key)

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n).astype(np.uint64)

    def uniform(self, shape) -> np.ndarray:
        """Uniform doubles in the open interval (0, 1)."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        top53 = (self.raw(n) >> np.uint64(11)).astype(np.float64)
        return ((top53 + 0.5) / 9007199254740992.0).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        theta = _TWO_PI * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by the portable uniform stream.
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 1))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def integers(self, high: int, size: int) -> np.ndarray:
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def choice(self, n: int, size: int) -> np.ndarray:
        """Sample ``size`` distinct indices from ``range(n)``."""
        if size >= n:
            return self.permutation(n)
        return self.permutation(n)[:size]
