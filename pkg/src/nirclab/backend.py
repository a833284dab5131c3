"""Kernel backend selection.

Hot numeric kernels are decorated with ``maybe_njit``. By default that is
numba's ``njit``; setting the environment variable ``NIRCLAB_NO_JIT=1``
turns every kernel into the same source run by the interpreter. Integer
RNG math agrees bit for bit between the two backends; floating point
agrees to tolerance (fastmath may reassociate sums under the jit).

The fallback relies on uint64 wraparound, so numpy's overflow warning is
silenced globally when it is active.
"""

from __future__ import annotations

import os

import numpy as np

USE_JIT = os.environ.get("NIRCLAB_NO_JIT", "0").lower() not in ("1", "true", "yes")

if USE_JIT:
    from numba import njit as _njit
else:
    np.seterr(over="ignore")


def maybe_njit(*args, **kwargs):
    """``njit`` when the jit backend is active, identity otherwise.

    Usable both bare (``@maybe_njit``) and with options
    (``@maybe_njit(cache=True, fastmath=True)``).
    """
    if len(args) == 1 and callable(args[0]) and not kwargs:
        fn = args[0]
        return _njit(fn) if USE_JIT else fn

    def wrap(fn):
        if USE_JIT:
            return _njit(fn, **kwargs)
        return fn

    return wrap


def jit_kernel(fn):
    """Decorator for the hot kernels: cached, fastmath, nopython."""
    if USE_JIT:
        return _njit(fn, cache=True, fastmath=True)
    return fn
