"""Ray intersection: primitive tests, linear scan, and a median-split BVH.

Kernels avoid infinities (guarded slab test, 1e30 as the far distance)
so they stay valid under fastmath. Primitive ids are combined: id < T
is a triangle, id - T a sphere. Hits closer than the scene ray epsilon
are ignored, and spawned rays are additionally offset along the
geometric normal by the same epsilon.
"""

from __future__ import annotations

import numpy as np

from .backend import jit_kernel

T_FAR = 1.0e30


@jit_kernel
def ray_tri_s(ox, oy, oz, dx, dy, dz,
              v0x, v0y, v0z, e1x, e1y, e1z, e2x, e2y, e2z):
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if det > -1e-12 and det < 1e-12:
        return -1.0
    inv = 1.0 / det
    tx = ox - v0x
    ty = oy - v0y
    tz = oz - v0z
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-9 or u > 1.0 + 1e-9:
        return -1.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -1e-9 or u + v > 1.0 + 1e-9:
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= 0.0:
        return -1.0
    return t


@jit_kernel
def ray_sph_s(ox, oy, oz, dx, dy, dz, cx, cy, cz, r):
    lx = ox - cx
    ly = oy - cy
    lz = oz - cz
    b = dx * lx + dy * ly + dz * lz
    c = lx * lx + ly * ly + lz * lz - r * r
    disc = b * b - c
    if disc < 0.0:
        return -1.0
    sq = np.sqrt(disc)
    t0 = -b - sq
    if t0 > 0.0:
        return t0
    t1 = -b + sq
    if t1 > 0.0:
        return t1
    return -1.0


@jit_kernel
def _box_hit(ox, oy, oz, dx, dy, dz, lox, loy, loz, hix, hiy, hiz, t_best):
    t0 = 0.0
    t1 = t_best
    for axis in range(3):
        if axis == 0:
            o = ox
            d = dx
            lo = lox
            hi = hix
        elif axis == 1:
            o = oy
            d = dy
            lo = loy
            hi = hiy
        else:
            o = oz
            d = dz
            lo = loz
            hi = hiz
        if d > -1e-30 and d < 1e-30:
            if o < lo or o > hi:
                return False
        else:
            inv = 1.0 / d
            ta = (lo - o) * inv
            tb = (hi - o) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
    return True


@jit_kernel
def _finish_hit(scn, kind, prim, t, ox, oy, oz, dx, dy, dz):
    px = ox + dx * t
    py = oy + dy * t
    pz = oz + dz * t
    if kind == 0:
        nx = scn.tri_ng[prim, 0]
        ny = scn.tri_ng[prim, 1]
        nz = scn.tri_ng[prim, 2]
        mid = scn.tri_mat[prim]
    else:
        inv = 1.0 / scn.sph_r[prim]
        nx = (px - scn.sph_c[prim, 0]) * inv
        ny = (py - scn.sph_c[prim, 1]) * inv
        nz = (pz - scn.sph_c[prim, 2]) * inv
        mid = scn.sph_mat[prim]
    return kind, prim, t, px, py, pz, nx, ny, nz, mid


@jit_kernel
def intersect_linear(scn, ox, oy, oz, dx, dy, dz, t_max):
    """Brute-force nearest hit. Returns kind -1 on miss."""
    eps = scn.eps
    best_t = t_max
    kind = -1
    prim = -1
    for i in range(scn.tri_v0.shape[0]):
        t = ray_tri_s(ox, oy, oz, dx, dy, dz,
                      scn.tri_v0[i, 0], scn.tri_v0[i, 1], scn.tri_v0[i, 2],
                      scn.tri_e1[i, 0], scn.tri_e1[i, 1], scn.tri_e1[i, 2],
                      scn.tri_e2[i, 0], scn.tri_e2[i, 1], scn.tri_e2[i, 2])
        if t > eps and t < best_t:
            best_t = t
            kind = 0
            prim = i
    for i in range(scn.sph_c.shape[0]):
        t = ray_sph_s(ox, oy, oz, dx, dy, dz,
                      scn.sph_c[i, 0], scn.sph_c[i, 1], scn.sph_c[i, 2],
                      scn.sph_r[i])
        if t > eps and t < best_t:
            best_t = t
            kind = 1
            prim = i
    if kind < 0:
        return -1, -1, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1
    return _finish_hit(scn, kind, prim, best_t, ox, oy, oz, dx, dy, dz)


@jit_kernel
def intersect_bvh(scn, ox, oy, oz, dx, dy, dz, t_max):
    """Nearest hit through the BVH. Same contract as intersect_linear."""
    eps = scn.eps
    ntri = scn.tri_v0.shape[0]
    best_t = t_max
    kind = -1
    prim = -1
    stack = np.empty(128, np.int32)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _box_hit(ox, oy, oz, dx, dy, dz,
                        scn.bvh_lo[node, 0], scn.bvh_lo[node, 1], scn.bvh_lo[node, 2],
                        scn.bvh_hi[node, 0], scn.bvh_hi[node, 1], scn.bvh_hi[node, 2],
                        best_t):
            continue
        count = scn.bvh_b[node]
        if count > 0:
            first = scn.bvh_a[node]
            for k in range(first, first + count):
                pid = scn.bvh_prim[k]
                if pid < ntri:
                    t = ray_tri_s(ox, oy, oz, dx, dy, dz,
                                  scn.tri_v0[pid, 0], scn.tri_v0[pid, 1], scn.tri_v0[pid, 2],
                                  scn.tri_e1[pid, 0], scn.tri_e1[pid, 1], scn.tri_e1[pid, 2],
                                  scn.tri_e2[pid, 0], scn.tri_e2[pid, 1], scn.tri_e2[pid, 2])
                    if t > eps and t < best_t:
                        best_t = t
                        kind = 0
                        prim = pid
                else:
                    j = pid - ntri
                    t = ray_sph_s(ox, oy, oz, dx, dy, dz,
                                  scn.sph_c[j, 0], scn.sph_c[j, 1], scn.sph_c[j, 2],
                                  scn.sph_r[j])
                    if t > eps and t < best_t:
                        best_t = t
                        kind = 1
                        prim = j
        elif count == 0 and scn.bvh_a[node] != node:
            stack[top] = scn.bvh_a[node]
            top += 1
            stack[top] = node + 1
            top += 1
    if kind < 0:
        return -1, -1, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1
    return _finish_hit(scn, kind, prim, best_t, ox, oy, oz, dx, dy, dz)


@jit_kernel
def occluded(scn, ox, oy, oz, dx, dy, dz, t_max):
    """Any-hit query for shadow rays."""
    kind, _, _, _, _, _, _, _, _, _ = intersect_bvh(
        scn, ox, oy, oz, dx, dy, dz, t_max)
    return kind >= 0


def build_bvh(tri_v0, tri_e1, tri_e2, sph_c, sph_r):
    """Median-split BVH. Returns (lo, hi, a, b, prim_order) flat arrays.

    Node layout: leaf iff b > 0, then prims are prim_order[a : a+b].
    Internal nodes store the right-child index in a; the left child is
    the next node. An empty scene yields a single leaf with b = 0 and
    a pointing at itself, which the traversal skips.
    """
    T = len(tri_v0)
    S = len(sph_c)
    P = T + S
    if P == 0:
        return (np.zeros((1, 3)), np.zeros((1, 3)),
                np.zeros(1, np.int32), np.zeros(1, np.int32),
                np.zeros(0, np.int32))

    lo = np.empty((P, 3))
    hi = np.empty((P, 3))
    if T:
        v0 = tri_v0
        v1 = tri_v0 + tri_e1
        v2 = tri_v0 + tri_e2
        lo[:T] = np.minimum(np.minimum(v0, v1), v2)
        hi[:T] = np.maximum(np.maximum(v0, v1), v2)
    if S:
        lo[T:] = sph_c - sph_r[:, None]
        hi[T:] = sph_c + sph_r[:, None]
    cent = 0.5 * (lo + hi)

    node_lo, node_hi, node_a, node_b = [], [], [], []
    order = []

    def emit(idx):
        me = len(node_a)
        node_lo.append(lo[idx].min(axis=0))
        node_hi.append(hi[idx].max(axis=0))
        node_a.append(0)
        node_b.append(0)
        if len(idx) <= 4:
            node_a[me] = len(order)
            node_b[me] = len(idx)
            order.extend(int(i) for i in idx)
            return me
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        srt = idx[np.argsort(c[:, axis], kind="stable")]
        mid = len(srt) // 2
        emit(srt[:mid])
        node_a[me] = emit(srt[mid:])
        return me

    import sys

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10000))
    try:
        emit(np.arange(P))
    finally:
        sys.setrecursionlimit(old)
    return (np.array(node_lo), np.array(node_hi),
            np.array(node_a, np.int32), np.array(node_b, np.int32),
            np.array(order, np.int32))
