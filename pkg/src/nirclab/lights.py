"""Light selection, next-event sampling, and environment evaluation.

One light table covers area lights and the environment, selected
uniformly by power. Environment next-event samples use the cosine
hemisphere around the shading normal, so the solid-angle pdf is
q_env * cos(theta) / pi. Area-light pdfs convert from the area measure
with the usual distance-squared over cosine factor.
"""

from __future__ import annotations

import numpy as np

from .backend import jit_kernel
from .core import cosine_dir_s, onb_s
from .geometry import T_FAR
from .scene import ENV_CONSTANT, ENV_LATLONG, ENV_NONE, ENV_SKY, LIGHT_ENV, LIGHT_TRI


@jit_kernel
def env_eval_s(scn, dx, dy, dz):
    kind = scn.env_kind
    if kind == ENV_NONE:
        return 0.0, 0.0, 0.0
    if kind == ENV_CONSTANT:
        return scn.env_c0[0], scn.env_c0[1], scn.env_c0[2]
    if kind == ENV_SKY:
        if dy >= 0.0:
            t = dy
            ax, ay, az = scn.env_c1[0], scn.env_c1[1], scn.env_c1[2]
            bx, by, bz = scn.env_c0[0], scn.env_c0[1], scn.env_c0[2]
        else:
            t = -dy
            ax, ay, az = scn.env_c1[0], scn.env_c1[1], scn.env_c1[2]
            bx, by, bz = scn.env_c2[0], scn.env_c2[1], scn.env_c2[2]
        return (ax + (bx - ax) * t, ay + (by - ay) * t, az + (bz - az) * t)
    # lat-long grid, nearest texel
    h = scn.env_img.shape[0]
    w = scn.env_img.shape[1]
    cy = dy
    if cy > 1.0:
        cy = 1.0
    elif cy < -1.0:
        cy = -1.0
    v = np.arccos(cy) / np.pi
    u = 0.5 + np.arctan2(dx, -dz) / (2.0 * np.pi)
    col = int(u * w)
    row = int(v * h)
    if col >= w:
        col = w - 1
    if col < 0:
        col = 0
    if row >= h:
        row = h - 1
    if row < 0:
        row = 0
    return (scn.env_img[row, col, 0], scn.env_img[row, col, 1],
            scn.env_img[row, col, 2])


@jit_kernel
def sample_light_s(scn, px, py, pz, nsx, nsy, nsz, u_pick, u1, u2):
    """One next-event candidate from the power-weighted light table.

    Returns (wix, wiy, wiz, dist, er, eg, eb, pdf_sa, src_kind) where
    src_kind is the light-table kind, or -1 with pdf 0 when the table is
    empty or the draw is degenerate. The caller still owes the shadow
    ray: dist is the distance to the sample (T_FAR for environment).
    """
    n = scn.lt_cdf.shape[0]
    if n == 0:
        return 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1
    lo = 0
    hi = n - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if scn.lt_cdf[mid] < u_pick:
            lo = mid + 1
        else:
            hi = mid
    q = scn.lt_q[lo]
    kind = scn.lt_kind[lo]
    prim = scn.lt_prim[lo]
    if kind == LIGHT_ENV:
        tx, ty, tz, bx, by, bz = onb_s(nsx, nsy, nsz)
        lx, ly, lz, pdf = cosine_dir_s(u1, u2)
        wix = tx * lx + bx * ly + nsx * lz
        wiy = ty * lx + by * ly + nsy * lz
        wiz = tz * lx + bz * ly + nsz * lz
        er, eg, eb = env_eval_s(scn, wix, wiy, wiz)
        return wix, wiy, wiz, T_FAR, er, eg, eb, q * pdf, LIGHT_ENV
    if kind == LIGHT_TRI:
        r1 = np.sqrt(u1)
        b1 = r1 * (1.0 - u2)
        b2 = r1 * u2
        lxp = scn.tri_v0[prim, 0] + scn.tri_e1[prim, 0] * b1 + scn.tri_e2[prim, 0] * b2
        lyp = scn.tri_v0[prim, 1] + scn.tri_e1[prim, 1] * b1 + scn.tri_e2[prim, 1] * b2
        lzp = scn.tri_v0[prim, 2] + scn.tri_e1[prim, 2] * b1 + scn.tri_e2[prim, 2] * b2
        lnx = scn.tri_ng[prim, 0]
        lny = scn.tri_ng[prim, 1]
        lnz = scn.tri_ng[prim, 2]
        area = scn.tri_area[prim]
        mid = scn.tri_mat[prim]
    else:
        z = 1.0 - 2.0 * u1
        s = np.sqrt(1.0 - z * z if z * z < 1.0 else 0.0)
        phi = 2.0 * np.pi * u2
        lnx = s * np.cos(phi)
        lny = s * np.sin(phi)
        lnz = z
        r = scn.sph_r[prim]
        lxp = scn.sph_c[prim, 0] + r * lnx
        lyp = scn.sph_c[prim, 1] + r * lny
        lzp = scn.sph_c[prim, 2] + r * lnz
        area = 4.0 * np.pi * r * r
        mid = scn.sph_mat[prim]
    dx = lxp - px
    dy = lyp - py
    dz = lzp - pz
    d2 = dx * dx + dy * dy + dz * dz
    dist = np.sqrt(d2)
    if dist < 1e-9:
        return 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1
    wix = dx / dist
    wiy = dy / dist
    wiz = dz / dist
    cos_l = -(wix * lnx + wiy * lny + wiz * lnz)
    if cos_l < 0.0:
        cos_l = -cos_l  # two-sided emitters
    if cos_l < 1e-9 or area < 1e-12:
        return 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1
    pdf_sa = q * d2 / (area * cos_l)
    return (wix, wiy, wiz, dist,
            scn.mat_emit[mid, 0], scn.mat_emit[mid, 1], scn.mat_emit[mid, 2],
            pdf_sa, kind)


@jit_kernel
def nee_pdf_for_hit_s(scn, hit_kind, prim, t, wix, wiy, wiz,
                      lnx, lny, lnz):
    """Solid-angle NEE pdf of the direction that hit an area light.

    hit_kind is the intersection kind (0 triangle, 1 sphere); normals
    are the light-surface geometric normal at the hit.
    """
    if hit_kind == 0:
        q = scn.tri_lq[prim]
        area = scn.tri_area[prim]
    else:
        q = scn.sph_lq[prim]
        area = 4.0 * np.pi * scn.sph_r[prim] * scn.sph_r[prim]
    if q <= 0.0 or area < 1e-12:
        return 0.0
    cos_l = -(wix * lnx + wiy * lny + wiz * lnz)
    if cos_l < 0.0:
        cos_l = -cos_l
    if cos_l < 1e-9:
        return 0.0
    return q * t * t / (area * cos_l)


@jit_kernel
def nee_pdf_for_env_s(scn, nsx, nsy, nsz, wix, wiy, wiz):
    """Solid-angle NEE pdf of an escaped direction under env sampling."""
    if scn.env_q <= 0.0:
        return 0.0
    c = nsx * wix + nsy * wiy + nsz * wiz
    if c <= 0.0:
        return 0.0
    return scn.env_q * c / np.pi


def sample_light_nee(scene, it, rng):
    """One-sample NEE estimate at an interaction (Python-level helper).

    rng is a numpy Generator. Returns (wi, radiance, pdf_sa, contribution,
    valid); valid is False when the scene has nothing to sample or the
    draw was degenerate, in which case the contribution is zero.
    """
    from .bsdf import bsdf_eval
    from .geometry import occluded

    scn = scene.pack
    u_pick, u1, u2 = rng.random(3)
    p = it.position
    ns = it.ns
    wix, wiy, wiz, dist, er, eg, eb, pdf, src = sample_light_s(
        scn, p[0], p[1], p[2], ns[0], ns[1], ns[2], u_pick, u1, u2)
    zero = np.zeros(3)
    if src < 0 or pdf <= 0.0:
        return zero, zero, 0.0, zero, False
    wi = np.array([wix, wiy, wiz])
    rad = np.array([er, eg, eb])
    cos_s = float(ns @ wi)
    if cos_s <= 0.0:
        return wi, rad, float(pdf), zero, True
    o = p + it.ng * (scn.eps if it.ng @ wi >= 0.0 else -scn.eps)
    t_lim = dist - 2.0 * scn.eps if dist < T_FAR else T_FAR
    if t_lim > 0.0 and occluded(scn, o[0], o[1], o[2], wix, wiy, wiz, t_lim):
        return wi, rad, float(pdf), zero, True
    f = bsdf_eval(scene, it, wi)
    return wi, rad, float(pdf), f * rad * (cos_s / pdf), True


@jit_kernel
def camera_ray_s(cam, ix, iy, u, v):
    """Primary ray through pixel (ix, iy) with subpixel jitter (u, v)."""
    w = cam[14]
    h = cam[15]
    sx = ((ix + u) / w * 2.0 - 1.0) * cam[12] * cam[13]
    sy = (1.0 - (iy + v) / h * 2.0) * cam[12]
    dx = cam[3] * sx + cam[6] * sy + cam[9]
    dy = cam[4] * sx + cam[7] * sy + cam[10]
    dz = cam[5] * sx + cam[8] * sy + cam[11]
    inv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
    return cam[0], cam[1], cam[2], dx * inv, dy * inv, dz * inv
