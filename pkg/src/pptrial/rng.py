"""Counter-based random numbers (Philox4x32-10).

Every draw is a pure function of ``(key, counter)``: the key is the master
seed and the counter addresses the draw, typically
``(subject, visit, node, 0)``. Streams are therefore independent of
execution order, of how many subjects are generated, and of whether the
work is split across workers.

Reference: Salmon, Moraes, Dror & Shaw (2011), "Parallel random numbers:
as easy as 1, 2, 3". Known-answer vectors from Random123 are in the tests.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_ROUNDS = 10

# Node tags used in the counter's third word. Kept here so the simulator,
# the bootstrap and the g-formula never collide on a stream.
STREAMS = {
    "baseline": 1,
    "baseline_u": 2,
    "covariate": 3,
    "treatment": 4,
    "dropout": 5,
    "outcome": 6,
    "competing": 7,
    "measurement": 8,
    "control": 9,
    "bootstrap": 20,
    "gformula": 21,
    "gformula_sample": 22,
}


def philox4x32(counter, key) -> np.ndarray:
    """Philox4x32 with 10 rounds.

    ``counter`` is array-like of shape ``(..., 4)`` holding 32-bit words and
    ``key`` a pair of 32-bit words. Returns uint32 words of the same shape.
    """
    c = np.asarray(counter, dtype=np.uint64) & _MASK32
    c0, c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for _ in range(_ROUNDS):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
        k0 = (k0 + _W0) & 0xFFFFFFFF
        k1 = (k1 + _W1) & 0xFFFFFFFF
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def _key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def _counters(a, b, stream: int, draw: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    b = np.broadcast_to(np.asarray(b, dtype=np.uint64), a.shape)
    out = np.empty(a.shape + (4,), dtype=np.uint64)
    out[..., 0] = a
    out[..., 1] = b
    out[..., 2] = stream
    out[..., 3] = draw
    return out


def _to_unit(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    # 53-bit mantissa; the half-ulp offset keeps draws strictly inside (0, 1)
    hi = hi.astype(np.uint64) >> np.uint64(5)
    lo = lo.astype(np.uint64) >> np.uint64(6)
    return (hi.astype(np.float64) * 67108864.0 + lo.astype(np.float64) + 0.5) / 9007199254740992.0


class CounterRNG:
    """Stateless generator keyed by a master seed.

    ``rng.uniform(subjects, visit, "treatment")`` returns one uniform per
    subject; calling it again with the same arguments returns the same
    numbers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = _key(seed)

    def _block(self, a, b, stream, draw=0):
        tag = STREAMS[stream] if isinstance(stream, str) else int(stream)
        return philox4x32(_counters(a, b, tag, draw), self._key)

    def uniform(self, a, b=0, stream="covariate", draw=0) -> np.ndarray:
        w = self._block(a, b, stream, draw)
        return _to_unit(w[..., 0], w[..., 1])

    def uniform_pair(self, a, b=0, stream="covariate", draw=0):
        w = self._block(a, b, stream, draw)
        return _to_unit(w[..., 0], w[..., 1]), _to_unit(w[..., 2], w[..., 3])

    def normal(self, a, b=0, stream="covariate", draw=0) -> np.ndarray:
        u1, u2 = self.uniform_pair(a, b, stream, draw)
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, n_max: int, a, b=0, stream="bootstrap", draw=0) -> np.ndarray:
        """Uniform integers in ``[0, n_max)``."""
        u = self.uniform(a, b, stream, draw)
        return np.minimum((u * n_max).astype(np.int64), n_max - 1)

    def spawn_seed(self, index: int) -> int:
        """Child master seed for replicate ``index``; a pure function of both."""
        w = philox4x32(_counters(np.uint64(index), 0, 0xFFFF, 0), self._key)
        return int(w[0]) | (int(w[1]) << 32)
