"""Counter-based SplitMix64 random streams.

Every random draw in the package goes through this module so results are
reproducible from a single 64-bit seed. A stream is identified by a 64-bit
key; ``derive`` folds labels (strings or ints) into a key, which makes
streams splittable by e.g. ``(layer_name, step)`` without shared state.

The i-th 64-bit output of the stream with key ``k`` is the SplitMix64
finalizer applied to ``k + (i + 1) * 0x9E3779B97F4A7C15`` (mod 2**64), i.e.
exactly the classic SplitMix64 generator seeded with ``k``.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _mix_int(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z):
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(_M1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_M2)
    z ^= z >> np.uint64(31)
    return z


def _label_value(label):
    if isinstance(label, str):
        # FNV-1a over UTF-8 bytes
        h = 0xCBF29CE484222325
        for b in label.encode("utf-8"):
            h = ((h ^ b) * 0x100000001B3) & MASK64
        return h
    return int(label) & MASK64


def derive(key, *labels):
    """Fold ``labels`` into ``key`` and return the child stream key."""
    k = int(key) & MASK64
    for label in labels:
        k = _mix_int(k + _mix_int(_label_value(label) + GOLDEN))
    return k


def bits(key, n):
    """First ``n`` raw 64-bit outputs of the stream."""
    counter = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = np.uint64(int(key) & MASK64) + counter * np.uint64(GOLDEN)
        return _mix_array(state)


def uniform(key, shape):
    """Doubles in [0, 1) with 53 random bits each."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape, dtype=np.int64))
    u = (bits(key, n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return u.reshape(shape)


def normal(key, shape):
    """Standard normal draws via Box-Muller on two derived uniform streams."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    u1 = 1.0 - uniform(derive(key, 1), shape)  # (0, 1]
    u2 = uniform(derive(key, 2), shape)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def permutation(key, n):
    """A uniformly random permutation of ``range(n)``."""
    return np.argsort(bits(key, n), kind="stable")


def choice(key, n, size):
    """``size`` distinct indices from ``range(n)``, in ascending order."""
    if size > n:
        raise ValueError(f"cannot choose {size} of {n} without replacement")
    return np.sort(permutation(key, n)[:size])
