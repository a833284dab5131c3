"""Real spherical harmonics, orthonormal and free of the Condon-Shortley
phase.

Convention: the polar axis is +z (z = cos theta), phi = atan2(y, x).
Coefficients are ordered l**2 + l + m for l in [0, bands) and m in
[-l, l], so a ``bands``-band expansion has bands**2 values and
Y(0,0) = 1/(2 sqrt(pi)).
"""

from __future__ import annotations

import math

import numpy as np

from .backend import maybe_njit
from .errors import ConfigError

MAX_BANDS = 8


def _norm_table(lmax):
    k = np.zeros((lmax, lmax))
    for l in range(lmax):
        for m in range(l + 1):
            k[l, m] = math.sqrt(
                (2 * l + 1) / (4.0 * math.pi) * math.factorial(l - m) / math.factorial(l + m)
            )
    return k


_NORM = _norm_table(MAX_BANDS)
_SQRT2 = math.sqrt(2.0)


@maybe_njit(inline="always")
def sh_eval_into(out, x, y, z, bands):
    """Write the bands**2 basis values for unit direction (x,y,z).

    Associated Legendre values come from the standard stable upward
    recurrences, with the (-1)^m phase omitted.
    """
    s = math.sqrt(x * x + y * y)
    if s > 0.0:
        cphi = x / s
        sphi = y / s
    else:
        cphi = 1.0
        sphi = 0.0

    cm = 1.0  # cos(m phi), sin(m phi), advanced per m
    sm = 0.0
    pmm = 1.0  # P_m^m, advanced per m
    for m in range(bands):
        if m > 0:
            pmm *= (2.0 * m - 1.0) * s
            cm, sm = cm * cphi - sm * sphi, sm * cphi + cm * sphi
        p_lm2 = 0.0
        p_lm1 = 0.0
        for l in range(m, bands):
            if l == m:
                p = pmm
            elif l == m + 1:
                p = z * (2.0 * m + 1.0) * pmm
            else:
                p = ((2.0 * l - 1.0) * z * p_lm1 - (l + m - 1.0) * p_lm2) / (l - m)
            p_lm2 = p_lm1
            p_lm1 = p
            base = l * l + l
            if m == 0:
                out[base] = _NORM[l, 0] * p
            else:
                k = _SQRT2 * _NORM[l, m] * p
                out[base + m] = k * cm
                out[base - m] = k * sm
    return out


def sh_eval_basis(direction, bands):
    """Basis values Y_l^m(direction) as an array of length bands**2."""
    if not (1 <= int(bands) <= MAX_BANDS):
        raise ConfigError(f"sh bands must be in [1, {MAX_BANDS}], got {bands}")
    d = np.asarray(direction, dtype=np.float64)
    out = np.empty(int(bands) ** 2)
    sh_eval_into(out, float(d[0]), float(d[1]), float(d[2]), int(bands))
    return out


def sh_eval_batch(dirs, bands):
    """Vectorized basis evaluation for dirs of shape (n, 3)."""
    if not (1 <= int(bands) <= MAX_BANDS):
        raise ConfigError(f"sh bands must be in [1, {MAX_BANDS}], got {bands}")
    bands = int(bands)
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    s = np.sqrt(x * x + y * y)
    safe = s > 0.0
    cphi = np.where(safe, x / np.where(safe, s, 1.0), 1.0)
    sphi = np.where(safe, y / np.where(safe, s, 1.0), 0.0)
    out = np.empty((d.shape[0], bands * bands))

    cm = np.ones_like(z)
    sm = np.zeros_like(z)
    pmm = np.ones_like(z)
    for m in range(bands):
        if m > 0:
            pmm = pmm * (2.0 * m - 1.0) * s
            cm, sm = cm * cphi - sm * sphi, sm * cphi + cm * sphi
        p_lm2 = np.zeros_like(z)
        p_lm1 = np.zeros_like(z)
        for l in range(m, bands):
            if l == m:
                p = pmm
            elif l == m + 1:
                p = z * (2.0 * m + 1.0) * pmm
            else:
                p = ((2.0 * l - 1.0) * z * p_lm1 - (l + m - 1.0) * p_lm2) / (l - m)
            p_lm2 = p_lm1
            p_lm1 = p
            base = l * l + l
            if m == 0:
                out[:, base] = _NORM[l, 0] * p
            else:
                k = _SQRT2 * _NORM[l, m]
                out[:, base + m] = k * p * cm
                out[:, base - m] = k * p * sm
    return out
