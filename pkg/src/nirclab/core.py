"""Spherical sampling, orthonormal frames, octahedral mapping, MIS weights.

Scalar kernels (``*_s`` suffix) work on unpacked floats so the renderer
can call them from nopython code; the array-facing wrappers are the
public API and what the tests exercise directly.
"""

from __future__ import annotations

import math

import numpy as np

from .backend import maybe_njit

INV_PI = 1.0 / math.pi
TWO_PI = 2.0 * math.pi


@maybe_njit(inline="always")
def dot3(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


@maybe_njit(inline="always")
def cross3(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


@maybe_njit(inline="always")
def normalize3(x, y, z):
    n = math.sqrt(x * x + y * y + z * z)
    if n == 0.0:
        return 0.0, 0.0, 1.0
    inv = 1.0 / n
    return x * inv, y * inv, z * inv


@maybe_njit(inline="always")
def onb_s(nx, ny, nz):
    """Branchless orthonormal basis around a unit normal (Duff et al. style).

    Returns (tx,ty,tz, bx,by,bz); (t, b, n) is right handed.
    """
    s = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (s + nz)
    b = nx * ny * a
    tx = 1.0 + s * nx * nx * a
    ty = s * b
    tz = -s * nx
    bx = b
    by = s + ny * ny * a
    bz = -ny
    return tx, ty, tz, bx, by, bz


@maybe_njit(inline="always")
def cosine_dir_s(u1, u2):
    """Cosine-weighted direction in the local frame (+z up), with pdf."""
    r = math.sqrt(u1)
    phi = TWO_PI * u2
    x = r * math.cos(phi)
    y = r * math.sin(phi)
    z = math.sqrt(max(0.0, 1.0 - u1))
    return x, y, z, z * INV_PI


@maybe_njit(inline="always")
def to_world_s(lx, ly, lz, tx, ty, tz, bx, by, bz, nx, ny, nz):
    return (
        lx * tx + ly * bx + lz * nx,
        lx * ty + ly * by + lz * ny,
        lx * tz + ly * bz + lz * nz,
    )


@maybe_njit(inline="always")
def balance_heuristic_s(pdf_a, n_a, pdf_b, n_b):
    wa = n_a * pdf_a
    wb = n_b * pdf_b
    denom = wa + wb
    if denom <= 0.0:
        return 0.0  # no valid strategy; the sample carries no weight
    return wa / denom


def balance_heuristic(pdf_a, n_a=1, pdf_b=0.0, n_b=1):
    """Balance-heuristic MIS weight n_a*pdf_a / (n_a*pdf_a + n_b*pdf_b).

    Both pdfs zero yields 0, which marks the sample invalid.
    """
    return balance_heuristic_s(float(pdf_a), float(n_a), float(pdf_b), float(n_b))


def make_frame(normal):
    """Orthonormal basis rows (t, b, n) for a unit normal vector."""
    n = np.asarray(normal, dtype=np.float64)
    tx, ty, tz, bx, by, bz = onb_s(n[0], n[1], n[2])
    return np.array([[tx, ty, tz], [bx, by, bz], [n[0], n[1], n[2]]])


def sample_cosine_hemisphere(u, frame):
    """Cosine-weighted hemisphere sample around frame's third row.

    ``u`` is a pair in [0,1); returns (direction, pdf) with
    pdf = cos(theta)/pi. Degenerate u is clamped into the open interval.
    """
    f = np.asarray(frame, dtype=np.float64)
    u1 = min(max(float(u[0]), 0.0), 1.0 - 1e-12)
    u2 = min(max(float(u[1]), 0.0), 1.0 - 1e-12)
    lx, ly, lz, pdf = cosine_dir_s(u1, u2)
    d = lx * f[0] + ly * f[1] + lz * f[2]
    return d, pdf


# Octahedral mapping: fold-over-diagonals with +z at the map center,
# returned in [0,1]^2.


@maybe_njit(inline="always")
def octa_encode_s(x, y, z):
    a = abs(x) + abs(y) + abs(z)
    px = x / a
    py = y / a
    if z < 0.0:
        ox = (1.0 - abs(py)) * (1.0 if px >= 0.0 else -1.0)
        oy = (1.0 - abs(px)) * (1.0 if py >= 0.0 else -1.0)
        px, py = ox, oy
    return 0.5 * (px + 1.0), 0.5 * (py + 1.0)


@maybe_njit(inline="always")
def octa_decode_s(u, v):
    px = 2.0 * u - 1.0
    py = 2.0 * v - 1.0
    z = 1.0 - abs(px) - abs(py)
    if z < 0.0:
        ox = (1.0 - abs(py)) * (1.0 if px >= 0.0 else -1.0)
        oy = (1.0 - abs(px)) * (1.0 if py >= 0.0 else -1.0)
        px, py = ox, oy
    return normalize3(px, py, z)


def octa_encode(d):
    d = np.asarray(d, dtype=np.float64)
    return octa_encode_s(d[0], d[1], d[2])


def octa_decode(u, v):
    return np.array(octa_decode_s(float(u), float(v)))


def octa_quantize(u, v, bits=16):
    """Round map coordinates to ``bits`` per axis (storage simulation)."""
    q = (1 << bits) - 1
    return round(u * q) / q, round(v * q) / q
