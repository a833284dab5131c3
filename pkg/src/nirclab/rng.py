"""Counter-based deterministic random streams.

Every random draw is addressed, never consumed from hidden state: a draw
is a pure function of (seed, stream, dimension). Streams are derived from
a purpose tag plus frame/pixel/sample indices, and each path vertex owns a
fixed block of dimensions. Because unused dimensions cost nothing, two
estimators that share the same layout see identical draws on the
dimensions they share; extra draws made by one of them cannot shift the
other. That is what makes the plain and two-level renders comparable
sample by sample.

The mixer is the splitmix64 finalizer; the per-dimension walk is the
splitmix64 sequence itself (state = base + GAMMA * dimension).
"""

from __future__ import annotations

import numpy as np

from .backend import maybe_njit

U64 = np.uint64

GAMMA = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_S11 = U64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

# Stream purposes. Keeps unrelated subsystems statistically independent
# under one config seed.
P_RENDER = U64(0x01)
P_TRAIN = U64(0x02)
P_INIT = U64(0x03)
P_SHUFFLE = U64(0x04)
P_BASELINE = U64(0x05)
P_MEASURE = U64(0x06)

# Per-path dimension layout. The camera jitter sits below the first
# vertex block; vertex v (0-based, v=0 is the first surface hit) owns
# DIMS_PER_VERTEX dimensions starting at VERTEX_DIM_BASE + v * stride.
DIM_JITTER_X = 0
DIM_JITTER_Y = 1
VERTEX_DIM_BASE = 8
DIMS_PER_VERTEX = 64
OFF_LIGHT_PICK = 0
OFF_LIGHT_U = 1
OFF_LIGHT_V = 2
OFF_BSDF_U = 3
OFF_BSDF_V = 4
OFF_RR = 5
OFF_TERM = 6
OFF_CACHE = 8  # cache sample k uses OFF_CACHE + 2k and OFF_CACHE + 2k + 1


@maybe_njit(inline="always")
def mix64(x):
    x = (x + GAMMA) & U64(0xFFFFFFFFFFFFFFFF)
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


@maybe_njit(inline="always")
def stream_key(seed, purpose, frame, pixel, sample):
    """Collapse the stream coordinates into one 64-bit base state."""
    k = mix64(U64(seed) ^ purpose)
    k = mix64(k ^ U64(frame))
    k = mix64(k ^ U64(pixel))
    return mix64(k ^ U64(sample))


@maybe_njit(inline="always")
def rand_u64(key, dim):
    return mix64(key + GAMMA * U64(dim))


@maybe_njit(inline="always")
def rand_uniform(key, dim):
    """One double in [0, 1) for the given dimension."""
    return float(rand_u64(key, dim) >> _S11) * _INV53


@maybe_njit(inline="always")
def rand_pair(key, dim):
    return rand_uniform(key, dim), rand_uniform(key, dim + 1)


def _mix64_array(x):
    with np.errstate(over="ignore"):
        x = x + GAMMA
        x = (x ^ (x >> _S30)) * _M1
        x = (x ^ (x >> _S27)) * _M2
        return x ^ (x >> _S31)


def uniform_array(seed, purpose, stream, count, offset=0):
    """Vectorized draws: ``count`` doubles from one stream (numpy path)."""
    key = U64(stream_key(U64(seed), purpose, U64(0), U64(stream), U64(0)))
    dims = np.arange(offset, offset + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = _mix64_array(key + GAMMA * dims)
    return (x >> _S11).astype(np.float64) * _INV53


def normal_array(seed, purpose, stream, count, offset=0):
    """Deterministic standard normals via Box-Muller on addressed draws."""
    n = (count + 1) // 2
    u = uniform_array(seed, purpose, stream, 2 * n, offset)
    u1 = np.clip(u[:n], 1e-16, 1.0)
    u2 = u[n:]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * n)
    out[:n] = r * np.cos(2.0 * np.pi * u2)
    out[n:] = r * np.sin(2.0 * np.pi * u2)
    return out[:count]


def permutation(seed, purpose, stream, n):
    """Deterministic permutation of range(n) (argsort of addressed keys)."""
    key = U64(stream_key(U64(seed), purpose, U64(0), U64(stream), U64(0)))
    dims = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = _mix64_array(key + GAMMA * dims)
    return np.argsort(x, kind="stable")
