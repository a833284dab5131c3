"""Input encoding: multilevel hash grid + SH direction block + aux block.

Layout of an encoded input, in order:
  [0 : L*F)             hash-grid features of the position
  [L*F : L*F + bands^2) SH basis of the incident direction
  [... : +7)            aux features: shading normal mapped to (n+1)/2,
                        albedo (already in [0,1]), roughness

Positions are normalized into the scene box and cast to float32 BEFORE
cell indexing, in both the scalar and the batch path, so the two paths
land in identical grid cells. Corner hashing is the XOR-of-primes
scheme with primes (1, 2654435761, 805459861); every level hashes,
even coarse ones whose dense grid would fit the table.
"""

from __future__ import annotations

import numpy as np

from .backend import jit_kernel
from .sh import sh_eval_batch, sh_eval_into

P1 = 2654435761
P2 = 805459861

AUX_DIM = 7


def level_resolutions(levels, base_res, max_res):
    """Geometric resolution ladder from base to max inclusive."""
    if levels == 1:
        return np.array([base_res], np.int64)
    b = np.exp(np.log(max_res / base_res) / (levels - 1))
    res = np.floor(base_res * b ** np.arange(levels) + 0.5).astype(np.int64)
    return res


@jit_kernel
def _hash3(ix, iy, iz, mask):
    return (np.uint64(ix) * np.uint64(1)
            ^ np.uint64(iy) * np.uint64(P1)
            ^ np.uint64(iz) * np.uint64(P2)) & np.uint64(mask)


@jit_kernel
def encode_surface_into(spec, theta, px, py, pz, nx, ny, nz,
                        ar, ag, ab, rough, xin):
    """Position + aux blocks of the input vector (shared across dirs)."""
    ux = (px - spec.bb_min[0]) * spec.bb_inv[0]
    uy = (py - spec.bb_min[1]) * spec.bb_inv[1]
    uz = (pz - spec.bb_min[2]) * spec.bb_inv[2]
    if ux < 0.0:
        ux = 0.0
    elif ux > 1.0:
        ux = 1.0
    if uy < 0.0:
        uy = 0.0
    elif uy > 1.0:
        uy = 1.0
    if uz < 0.0:
        uz = 0.0
    elif uz > 1.0:
        uz = 1.0
    fx = np.float32(ux)
    fy = np.float32(uy)
    fz = np.float32(uz)
    feats = spec.feats
    mask = spec.table - 1
    for lvl in range(spec.levels):
        res = spec.res[lvl]
        sx = np.float32(fx * res)
        sy = np.float32(fy * res)
        sz = np.float32(fz * res)
        ix = int(np.floor(sx))
        iy = int(np.floor(sy))
        iz = int(np.floor(sz))
        wx = np.float32(sx - ix)
        wy = np.float32(sy - iy)
        wz = np.float32(sz - iz)
        base = lvl * spec.table * feats
        for f in range(feats):
            xin[lvl * feats + f] = 0.0
        for c in range(8):
            cx = c & 1
            cy = (c >> 1) & 1
            cz = (c >> 2) & 1
            w = ((wx if cx == 1 else np.float32(1.0) - wx)
                 * (wy if cy == 1 else np.float32(1.0) - wy)
                 * (wz if cz == 1 else np.float32(1.0) - wz))
            h = _hash3(ix + cx, iy + cy, iz + cz, mask)
            off = base + int(h) * feats
            for f in range(feats):
                xin[lvl * feats + f] += np.float32(w) * theta[off + f]
    a0 = spec.levels * feats + spec.bands * spec.bands
    xin[a0 + 0] = (nx + 1.0) * 0.5
    xin[a0 + 1] = (ny + 1.0) * 0.5
    xin[a0 + 2] = (nz + 1.0) * 0.5
    xin[a0 + 3] = ar
    xin[a0 + 4] = ag
    xin[a0 + 5] = ab
    xin[a0 + 6] = rough


@jit_kernel
def encode_dir_into(spec, dx, dy, dz, xin):
    """SH block of the input vector for one direction."""
    g = spec.levels * spec.feats
    sh_eval_into(xin[g : g + spec.bands * spec.bands], dx, dy, dz, spec.bands)


def encode_batch(spec, theta, pos, normal, albedo, rough, dirs, dtype=None):
    """Vectorized full encoding for training.

    Returns (X, entries, weights): X is (B, in_dim) in the requested
    dtype; entries (B, levels, 8) are per-corner feature-table slots
    (multiply by feats for theta offsets); weights (B, levels, 8) are
    the trilinear weights, needed again by the backward scatter.
    """
    if dtype is None:
        dtype = theta.dtype
    B = pos.shape[0]
    L = spec.levels
    F = spec.feats
    S = spec.bands * spec.bands
    X = np.zeros((B, spec.in_dim), dtype)
    u = (pos - spec.bb_min[None, :]) * spec.bb_inv[None, :]
    u = np.clip(u, 0.0, 1.0).astype(np.float32)
    entries = np.empty((B, L, 8), np.int64)
    weights = np.empty((B, L, 8), np.float32)
    grid = theta[: L * spec.table * F].reshape(L * spec.table, F)
    corner = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)],
                      np.int64)
    for lvl in range(L):
        s = (u * np.float32(spec.res[lvl])).astype(np.float32)
        i0 = np.floor(s).astype(np.int64)
        fr = s - i0.astype(np.float32)
        for c in range(8):
            idx = i0 + corner[c][None, :]
            h = ((idx[:, 0].astype(np.uint64) * np.uint64(1))
                 ^ (idx[:, 1].astype(np.uint64) * np.uint64(P1))
                 ^ (idx[:, 2].astype(np.uint64) * np.uint64(P2))) \
                & np.uint64(spec.table - 1)
            w = np.ones(B, np.float32)
            for ax in range(3):
                w = w * (fr[:, ax] if corner[c, ax] == 1
                         else np.float32(1.0) - fr[:, ax])
            slot = lvl * spec.table + h.astype(np.int64)
            entries[:, lvl, c] = slot
            weights[:, lvl, c] = w
            X[:, lvl * F : (lvl + 1) * F] += (
                w[:, None].astype(dtype) * grid[slot].astype(dtype))
    X[:, L * F : L * F + S] = sh_eval_batch(dirs, spec.bands).astype(dtype)
    a0 = L * F + S
    X[:, a0 : a0 + 3] = ((normal + 1.0) * 0.5).astype(dtype)
    X[:, a0 + 3 : a0 + 6] = albedo.astype(dtype)
    X[:, a0 + 6] = rough.astype(dtype)
    return X, entries, weights


def scatter_grid_grad(spec, grad_theta, entries, weights, dX):
    """Accumulate input-block gradients back into the feature tables."""
    F = spec.feats
    L = spec.levels
    dG = dX[:, : L * F].reshape(dX.shape[0], L, F)
    w = weights.astype(grad_theta.dtype)
    for f in range(F):
        np.add.at(grad_theta, entries * F + f, w * dG[:, :, f][:, :, None])


def encode(surface, wi, grids, bands=None):
    """One full encoded input (position, direction, aux) as a vector.

    surface is (position, normal, albedo, roughness); grids is any
    object with .spec and .theta (a cache or a bare net). The bands
    argument must match the spec when given.
    """
    spec = grids.spec
    theta = grids.theta
    if bands is not None and bands != spec.bands:
        from .errors import ConfigError

        raise ConfigError(
            f"encode bands {bands} does not match network bands {spec.bands}")
    pos, normal, albedo, rough = surface
    xin = np.zeros(spec.in_dim)
    encode_surface_into(spec, theta,
                        float(pos[0]), float(pos[1]), float(pos[2]),
                        float(normal[0]), float(normal[1]), float(normal[2]),
                        float(albedo[0]), float(albedo[1]), float(albedo[2]),
                        float(rough), xin)
    encode_dir_into(spec, float(wi[0]), float(wi[1]), float(wi[2]), xin)
    return xin
