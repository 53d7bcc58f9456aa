"""Counter-based random numbers for numba kernels.

Draw ``k`` of path ``p`` is ``mix64(key(seed, p) + k * GOLDEN)``, the
SplitMix64 output function applied to a Weyl sequence.  Any draw can be
reproduced from ``(seed, path, k)`` alone, so results do not depend on how
paths are scheduled.
"""

import math

import numpy as np
from numba import njit, uint64

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def mix64(z):
    z = uint64(z)
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(cache=True)
def path_key(seed, path):
    return mix64(mix64(uint64(seed)) ^ (uint64(path) * GOLDEN + uint64(1)))


@njit(cache=True)
def uniform(key, ctr):
    """Uniform on the open interval (0, 1)."""
    z = mix64(key + uint64(ctr) * GOLDEN)
    return ((z >> uint64(11)) + 0.5) * _INV53


@njit(cache=True)
def normal_pair(key, ctr):
    """Two independent standard normals from draws ``ctr`` and ``ctr + 1`` (Box-Muller)."""
    u1 = uniform(key, ctr)
    u2 = uniform(key, ctr + 1)
    rad = math.sqrt(-2.0 * math.log(u1))
    ang = 2.0 * math.pi * u2
    return rad * math.cos(ang), rad * math.sin(ang)


@njit(cache=True)
def fill_uniform(seed, path, out):
    key = path_key(seed, path)
    for k in range(out.shape[0]):
        out[k] = uniform(key, k)


@njit(cache=True)
def fill_normal(seed, path, out):
    key = path_key(seed, path)
    n = out.shape[0]
    for k in range(0, n, 2):
        z1, z2 = normal_pair(key, k)
        out[k] = z1
        if k + 1 < n:
            out[k + 1] = z2


def uniforms(seed: int, path: int, n: int) -> np.ndarray:
    out = np.empty(n)
    fill_uniform(np.uint64(seed), np.uint64(path), out)
    return out


def normals(seed: int, path: int, n: int) -> np.ndarray:
    out = np.empty(n)
    fill_normal(np.uint64(seed), np.uint64(path), out)
    return out
