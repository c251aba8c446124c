"""Counter-based random streams.

Every Monte Carlo draw in the package is a pure function of
``(stream key, draw index)``: the key is derived from the 64-bit run seed and
a tuple of integer tags (path index, coupling phase, coordinate, ...). The
value is the SplitMix64 output of ``key + (index + 1) * GAMMA``. Because no
generator state is shared, results do not depend on how paths are scheduled
across workers, and the numba kernels and the numpy backend see identical
numbers.
"""
from __future__ import annotations

import numpy as np

from ._accel import jit

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_M53 = 2.0 ** -53


def splitmix64(x: int) -> int:
    """Scalar SplitMix64 finaliser on python ints."""
    z = (x + GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, *tags: int) -> int:
    """Key for the stream identified by ``seed`` and integer ``tags``."""
    h = splitmix64(int(seed) & MASK64)
    for tag in tags:
        h = splitmix64(h ^ splitmix64(int(tag) & MASK64))
    return h


def derive_keys(base: int, indices) -> np.ndarray:
    """Vectorised ``derive_key(..., i)`` continuation for many path indices.

    Equivalent to ``[splitmix64(base ^ splitmix64(i)) for i in indices]``.
    """
    idx = np.asarray(indices, dtype=np.uint64)
    return _splitmix64_array(np.uint64(base) ^ _splitmix64_array(idx))


def _splitmix64_array(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # wrap-around is the point
        z = np.asarray(x, dtype=np.uint64) + np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def uniforms(key, index) -> np.ndarray:
    """Open-interval uniforms for (broadcast) arrays of keys and draw indices."""
    key = np.asarray(key, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = key + (index + np.uint64(1)) * np.uint64(GAMMA)
        # splitmix64 adds GAMMA once more; subtract so the scalar kernel matches
        z = _splitmix64_array(state - np.uint64(GAMMA))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


@jit(no_alloc=True)
def uniform_at(key, index):
    """Scalar kernel version of :func:`uniforms`."""
    z = np.uint64(key) + (np.uint64(index) + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (np.float64(z >> np.uint64(11)) + 0.5) * 1.1102230246251565e-16


def generator(key: int) -> np.random.Generator:
    """A numpy Generator seeded from a stream key, for low-volume choices."""
    return np.random.Generator(np.random.PCG64(int(key) & MASK64))
