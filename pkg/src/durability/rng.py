"""Counter-based splittable random streams.

A stream is a pair ``(key, counter)`` of unsigned 64-bit integers.  The n-th
draw of a stream is a pure function of ``(key, n)``, so any path can be
replayed or simulated out of order, and child streams are derived from a
parent key without touching global state.  Bits come from a keyed
SplitMix64-style hash: the counter is spread by the SplitMix64 finalizer,
xor-ed with the key and finalized again.

All primitives are numba-compiled and also callable from plain Python.
"""

import math

import numpy as np
from numba import njit

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_KEY_SALT = np.uint64(0xD1B54A32D192ED03)
_ONE = np.uint64(1)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(nogil=True, cache=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(nogil=True, cache=True)
def derive(key, index):
    """Key of child stream ``index`` of ``key``."""
    a = np.uint64(index)
    return mix64(mix64(np.uint64(key) + _KEY_SALT) ^ mix64((a + _ONE) * _GOLDEN))


@njit(nogil=True, cache=True)
def derive2(key, depth, index):
    return derive(derive(key, depth), index)


@njit(nogil=True, cache=True)
def seed_key(seed):
    return mix64(np.uint64(seed) * _GOLDEN + _KEY_SALT)


@njit(nogil=True, cache=True)
def bits(key, ctr):
    return mix64(np.uint64(key) ^ mix64((np.uint64(ctr) + _ONE) * _GOLDEN))


@njit(nogil=True, cache=True)
def uniform(key, ctr):
    """Uniform draw on the open interval (0, 1); returns ``(u, ctr + 1)``."""
    x = bits(key, ctr) >> _S11
    return (float(x) + 0.5) * _INV53, np.uint64(ctr) + _ONE


@njit(nogil=True, cache=True)
def exponential(key, ctr, rate):
    u, ctr = uniform(key, ctr)
    return -math.log(u) / rate, ctr


@njit(nogil=True, cache=True)
def normal(key, ctr, sigma):
    # Box-Muller, one output per two uniforms.
    u1, ctr = uniform(key, ctr)
    u2, ctr = uniform(key, ctr)
    return sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2), ctr


@njit(nogil=True, cache=True)
def poisson(key, ctr, lam):
    """Poisson draw by sequential inversion (one uniform, O(lam) work)."""
    u, ctr = uniform(key, ctr)
    k = 0
    p = math.exp(-lam)
    cdf = p
    while u > cdf and p > 0.0:
        k += 1
        p *= lam / k
        cdf += p
    return k, ctr


class Stream:
    """Mutable Python handle over a ``(key, counter)`` pair."""

    def __init__(self, key, counter=0):
        self.key = np.uint64(key)
        self.counter = np.uint64(counter)

    @classmethod
    def from_seed(cls, seed):
        return cls(seed_key(np.uint64(seed)))

    def child(self, *path):
        key = self.key
        for index in path:
            key = np.uint64(derive(key, np.uint64(index)))
        return Stream(key)

    def random(self):
        u, self.counter = uniform(self.key, self.counter)
        return u

    def numpy_generator(self):
        """A numpy Generator seeded from this stream's key (for resampling work)."""
        return np.random.default_rng(int(self.key))

    def __repr__(self):
        return f"Stream(key={int(self.key):#018x}, counter={int(self.counter)})"
