"""Counter-based Gaussian streams.

Every normal variate is a pure function of ``(seed, path, step, channel,
index)``: a Philox4x32-10 block is computed from that address and turned
into two normals by the Box-Muller transform.  Nothing is carried between
calls, so any single noise field can be regenerated in isolation and the
values never depend on how paths are batched or distributed over workers.
"""

from dataclasses import dataclass

import numba
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0

# high bits of the channel word separate independent uses of one seed
NOISE_TAG = 0
AUX_TAG = 1


@numba.njit(cache=True, nogil=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@numba.njit(cache=True, nogil=True)
def _philox_many(counters, key):
    out = np.empty_like(counters)
    k0 = np.uint64(key[0]) & _MASK
    k1 = np.uint64(key[1]) & _MASK
    for i in range(counters.shape[0]):
        r = _philox_block(counters[i, 0], counters[i, 1], counters[i, 2],
                          counters[i, 3], k0, k1)
        out[i, 0] = r[0]
        out[i, 1] = r[1]
        out[i, 2] = r[2]
        out[i, 3] = r[3]
    return out


@numba.njit(cache=True, nogil=True)
def _fill_normals(out, seed_lo, seed_hi, paths, step, word2):
    n = out.shape[1]
    k0 = np.uint64(seed_lo)
    k1 = np.uint64(seed_hi)
    c1 = np.uint64(step) & _MASK
    c2 = np.uint64(word2) & _MASK
    for p in range(paths.shape[0]):
        c3 = np.uint64(paths[p]) & _MASK
        for b in range((n + 1) // 2):
            x0, x1, x2, x3 = _philox_block(np.uint64(b), c1, c2, c3, k0, k1)
            a = ((x0 << np.uint64(32)) | x1) >> np.uint64(11)
            c = ((x2 << np.uint64(32)) | x3) >> np.uint64(11)
            u1 = (np.float64(a) + 0.5) * _INV_2_53
            u2 = (np.float64(c) + 0.5) * _INV_2_53
            r = np.sqrt(-2.0 * np.log(u1))
            out[p, 2 * b] = r * np.cos(_TWO_PI * u2)
            if 2 * b + 1 < n:
                out[p, 2 * b + 1] = r * np.sin(_TWO_PI * u2)


def philox4x32(counter, key):
    """Raw Philox4x32-10 blocks for an ``(n, 4)`` array of 32-bit counters."""
    counters = np.atleast_2d(np.asarray(counter, dtype=np.uint64))
    out = _philox_many(counters, np.asarray(key, dtype=np.uint64))
    return out.astype(np.uint32)


def _split_seed(seed):
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def normal_block(seed, paths, step, channel, n, tag=NOISE_TAG):
    """Standard normals for several paths at one ``(step, channel)`` address.

    Returns an array of shape ``(len(paths), n)``.  Row ``i`` is identical to
    what a call with ``paths=[paths[i]]`` returns.
    """
    if channel < 0 or channel >= 2**16 or tag < 0 or tag >= 2**16:
        raise ValueError("channel and tag must lie in [0, 65536)")
    if step < 0 or step >= 2**32:
        raise ValueError("step index out of range")
    paths = np.ascontiguousarray(paths, dtype=np.int64)
    if paths.size and (paths.min() < 0 or paths.max() >= 2**32):
        raise ValueError("path index out of range")
    lo, hi = _split_seed(seed)
    out = np.empty((paths.shape[0], int(n)), dtype=np.float64)
    _fill_normals(out, lo, hi, paths, int(step), (int(tag) << 16) | int(channel))
    return out


@dataclass(frozen=True)
class CounterStream:
    """Address of one Monte Carlo path inside a seeded family of streams."""

    seed: int
    path: int = 0

    def normals(self, step, channel, shape, tag=NOISE_TAG):
        shape = tuple(np.atleast_1d(shape).astype(int)) if not isinstance(shape, tuple) else shape
        n = int(np.prod(shape))
        z = normal_block(self.seed, [self.path], step, channel, n, tag=tag)
        return z.reshape(shape)

    def numpy_generator(self, purpose=0):
        """Independent numpy generator for auxiliary draws (bootstrap, sampling)."""
        ss = np.random.SeedSequence([int(self.seed), int(self.path), 0xA5A5, int(purpose)])
        return np.random.Generator(np.random.Philox(ss))
