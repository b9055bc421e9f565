"""Counter-based Philox4x32-10 streams.

Every random number is a pure function of (seed, step, particle, replica, tag),
so results never depend on evaluation order or on the number of threads.
Counter words: c0 = step, c1 = particle index, c2 = replica id, c3 = tag.
Key words: the low and high halves of the 64-bit seed.
"""

from __future__ import annotations

import numpy as np

M0 = np.uint64(0xD2511F53)
M1 = np.uint64(0xCD9E8D57)
W0 = np.uint32(0x9E3779B9)
W1 = np.uint32(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

TAG_INCREMENT = 0
TAG_INITIAL = 1
TAG_BOOTSTRAP = 2
TAG_AUX = 3


def _mulhilo(m, x):
    p = m * x.astype(np.uint64)
    return (p >> _SHIFT).astype(np.uint32), (p & _MASK).astype(np.uint32)


def philox4x32(counter, key, rounds: int = 10) -> np.ndarray:
    """Philox4x32 on arrays.  counter: (..., 4) uint32, key: (2,) or (..., 2) uint32."""
    c = np.array(counter, dtype=np.uint32)
    k = np.array(key, dtype=np.uint32)
    c0, c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    k0 = np.broadcast_to(k[..., 0], c0.shape).copy()
    k1 = np.broadcast_to(k[..., 1], c0.shape).copy()
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 = k0 + W0
                k1 = k1 + W1
            hi0, lo0 = _mulhilo(M0, c0)
            hi1, lo1 = _mulhilo(M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def seed_key(seed: int) -> np.ndarray:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint32)


def _to_unit(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """52-bit uniform in the open interval (0, 1) from two words.

    (x + 1/2) / 2^52 with x < 2^52 is exact in double precision, so neither
    endpoint can be produced by rounding.
    """
    a = (hi >> np.uint32(6)).astype(np.float64)
    b = (lo >> np.uint32(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) / 4503599627370496.0


class Stream:
    """Random numbers for one replica, addressed by (step, particle, tag)."""

    def __init__(self, seed: int, replica_id: int = 0):
        self.seed = int(seed)
        self.replica_id = int(replica_id)
        self.key = seed_key(seed)

    def _block(self, step, ids, tag: int) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.uint64)
        ctr = np.empty(ids.shape + (4,), dtype=np.uint32)
        ctr[..., 0] = np.uint32(int(step) & 0xFFFFFFFF)
        ctr[..., 1] = (ids & _MASK).astype(np.uint32)
        ctr[..., 2] = np.uint32(self.replica_id & 0xFFFFFFFF)
        ctr[..., 3] = np.uint32(tag)
        return philox4x32(ctr, self.key)

    def uniforms(self, step: int, ids, tag: int = TAG_AUX) -> np.ndarray:
        w = self._block(step, ids, tag)
        return _to_unit(w[..., 0], w[..., 1])

    def normals(self, step: int, ids, tag: int = TAG_INCREMENT) -> np.ndarray:
        """Box-Muller on the two uniforms of each counter (first output only)."""
        w = self._block(step, ids, tag)
        u1 = _to_unit(w[..., 0], w[..., 1])
        u2 = _to_unit(w[..., 2], w[..., 3])
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, step: int, ids, high: int, tag: int = TAG_BOOTSTRAP) -> np.ndarray:
        """Uniform integers in [0, high) (52-bit floor, bias below 2^-39 for high < 2^13)."""
        return np.floor(self.uniforms(step, ids, tag) * high).astype(np.int64)
