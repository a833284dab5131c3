"""BSDF models: lambert, GGX rough conductor, perfect mirror.

Scalar kernels take unpacked vectors and return unpacked results so the
render kernels stay allocation free. The Python wrappers operate on
Interaction objects and enforce the delta-lobe restrictions.

Conventions: wo and wi both point away from the surface; n is the
shading normal on the wo side; mirror sampling reports pdf 1 and a
value premultiplied so value * cos / pdf equals the albedo.
"""

from __future__ import annotations

import numpy as np

from .backend import jit_kernel
from .core import cosine_dir_s, onb_s
from .errors import ConfigError
from .scene import MAT_CONDUCTOR, MAT_LAMBERT, MAT_MIRROR

INV_PI = 1.0 / np.pi
ALPHA_MIN = 1e-3


@jit_kernel
def _ggx_d(alpha, ch):
    a2 = alpha * alpha
    d = ch * ch * (a2 - 1.0) + 1.0
    return a2 / (np.pi * d * d)


@jit_kernel
def _ggx_g1(alpha, cv):
    a2 = alpha * alpha
    return 2.0 * cv / (cv + np.sqrt(a2 + (1.0 - a2) * cv * cv))


@jit_kernel
def bsdf_eval_s(kind, ax, ay, az, rough,
                nx, ny, nz, wox, woy, woz, wix, wiy, wiz):
    """f_r as RGB. Zero outside the upper hemisphere and for deltas."""
    ci = nx * wix + ny * wiy + nz * wiz
    co = nx * wox + ny * woy + nz * woz
    if ci <= 0.0 or co <= 0.0 or kind == MAT_MIRROR:
        return 0.0, 0.0, 0.0
    if kind == MAT_LAMBERT:
        return ax * INV_PI, ay * INV_PI, az * INV_PI
    alpha = rough if rough > ALPHA_MIN else ALPHA_MIN
    hx = wix + wox
    hy = wiy + woy
    hz = wiz + woz
    hl = np.sqrt(hx * hx + hy * hy + hz * hz)
    if hl < 1e-12:
        return 0.0, 0.0, 0.0
    hx /= hl
    hy /= hl
    hz /= hl
    ch = nx * hx + ny * hy + nz * hz
    if ch <= 0.0:
        return 0.0, 0.0, 0.0
    d = _ggx_d(alpha, ch)
    g = _ggx_g1(alpha, ci) * _ggx_g1(alpha, co)
    cd = wox * hx + woy * hy + woz * hz
    if cd < 0.0:
        cd = 0.0
    s5 = (1.0 - cd)
    s5 = s5 * s5 * s5 * s5 * s5
    scale = d * g / (4.0 * ci * co)
    fr = (ax + (1.0 - ax) * s5) * scale
    fg = (ay + (1.0 - ay) * s5) * scale
    fb = (az + (1.0 - az) * s5) * scale
    return fr, fg, fb


@jit_kernel
def bsdf_pdf_s(kind, rough, nx, ny, nz, wox, woy, woz, wix, wiy, wiz):
    """Solid-angle pdf of bsdf_sample_s. Zero for deltas and lower hemisphere."""
    ci = nx * wix + ny * wiy + nz * wiz
    co = nx * wox + ny * woy + nz * woz
    if ci <= 0.0 or co <= 0.0 or kind == MAT_MIRROR:
        return 0.0
    if kind == MAT_LAMBERT:
        return ci * INV_PI
    alpha = rough if rough > ALPHA_MIN else ALPHA_MIN
    hx = wix + wox
    hy = wiy + woy
    hz = wiz + woz
    hl = np.sqrt(hx * hx + hy * hy + hz * hz)
    if hl < 1e-12:
        return 0.0
    hx /= hl
    hy /= hl
    hz /= hl
    ch = nx * hx + ny * hy + nz * hz
    if ch <= 0.0:
        return 0.0
    cd = wox * hx + woy * hy + woz * hz
    if cd < 1e-9:
        return 0.0
    return _ggx_d(alpha, ch) * ch / (4.0 * cd)


@jit_kernel
def bsdf_sample_s(kind, ax, ay, az, rough,
                  nx, ny, nz, wox, woy, woz, u1, u2):
    """Importance sample wi.

    Returns (wix, wiy, wiz, pdf, fx, fy, fz, is_delta). A pdf of 0
    signals an invalid sample (throughput must be dropped).
    """
    if kind == MAT_MIRROR:
        co = nx * wox + ny * woy + nz * woz
        wix = 2.0 * co * nx - wox
        wiy = 2.0 * co * ny - woy
        wiz = 2.0 * co * nz - woz
        ci = nx * wix + ny * wiy + nz * wiz
        if ci < 1e-9:
            return 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1
        inv = 1.0 / ci
        return wix, wiy, wiz, 1.0, ax * inv, ay * inv, az * inv, 1
    if kind == MAT_LAMBERT:
        tx, ty, tz, bx, by, bz = onb_s(nx, ny, nz)
        lx, ly, lz, pdf = cosine_dir_s(u1, u2)
        wix = tx * lx + bx * ly + nx * lz
        wiy = ty * lx + by * ly + ny * lz
        wiz = tz * lx + bz * ly + nz * lz
        co = nx * wox + ny * woy + nz * woz
        if co <= 0.0 or pdf <= 0.0:
            return 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0
        return wix, wiy, wiz, pdf, ax * INV_PI, ay * INV_PI, az * INV_PI, 0
    # rough conductor: sample the half vector from the GGX distribution
    alpha = rough if rough > ALPHA_MIN else ALPHA_MIN
    ch = np.sqrt((1.0 - u1) / (1.0 + (alpha * alpha - 1.0) * u1))
    sh = np.sqrt(1.0 - ch * ch if ch < 1.0 else 0.0)
    phi = 2.0 * np.pi * u2
    tx, ty, tz, bx, by, bz = onb_s(nx, ny, nz)
    hlx = sh * np.cos(phi)
    hly = sh * np.sin(phi)
    hx = tx * hlx + bx * hly + nx * ch
    hy = ty * hlx + by * hly + ny * ch
    hz = tz * hlx + bz * hly + nz * ch
    cd = wox * hx + woy * hy + woz * hz
    if cd < 1e-9:
        return 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0
    wix = 2.0 * cd * hx - wox
    wiy = 2.0 * cd * hy - woy
    wiz = 2.0 * cd * hz - woz
    pdf = _ggx_d(alpha, ch) * ch / (4.0 * cd)
    fx, fy, fz = bsdf_eval_s(kind, ax, ay, az, rough,
                             nx, ny, nz, wox, woy, woz, wix, wiy, wiz)
    ci = nx * wix + ny * wiy + nz * wiz
    if ci <= 0.0 or pdf <= 0.0:
        return 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0
    return wix, wiy, wiz, pdf, fx, fy, fz, 0


# -- Interaction-level wrappers -----------------------------------------


def _mat_of(scene, it):
    p = scene.pack
    m = it.mat
    return (int(p.mat_kind[m]), p.mat_albedo[m], float(p.mat_rough[m]))


def bsdf_eval(scene, it, wi):
    kind, alb, rough = _mat_of(scene, it)
    if kind == MAT_MIRROR:
        return np.zeros(3)
    n = it.ns
    f = bsdf_eval_s(kind, alb[0], alb[1], alb[2], rough,
                    n[0], n[1], n[2], it.wo[0], it.wo[1], it.wo[2],
                    wi[0], wi[1], wi[2])
    return np.array(f)


def bsdf_pdf(scene, it, wi):
    kind, _, rough = _mat_of(scene, it)
    if kind == MAT_MIRROR:
        raise ConfigError("pdf query on a delta lobe is unsupported")
    n = it.ns
    return float(bsdf_pdf_s(kind, rough, n[0], n[1], n[2],
                            it.wo[0], it.wo[1], it.wo[2],
                            wi[0], wi[1], wi[2]))


def bsdf_sample(scene, it, u1, u2):
    """Returns (wi, pdf, value, is_delta)."""
    kind, alb, rough = _mat_of(scene, it)
    n = it.ns
    wix, wiy, wiz, pdf, fx, fy, fz, dlt = bsdf_sample_s(
        kind, alb[0], alb[1], alb[2], rough,
        n[0], n[1], n[2], it.wo[0], it.wo[1], it.wo[2], u1, u2)
    return (np.array([wix, wiy, wiz]), float(pdf),
            np.array([fx, fy, fz]), bool(dlt))
