"""Path-walk kernels shared by the renderer and the training pass.

Everything here is scalar nopython code over the packed scene tuple.
The training walk records one row per surface vertex and finishes with
a backward sweep that turns the raw per-vertex data into radiance
targets, so a single traced path yields one training record per
non-delta vertex.

Random numbers are addressed, never drawn from hidden state: each
vertex owns a fixed dimension block (see rng.py), which keeps walks
reproducible and lets different passes share or skip draws freely.
"""

from __future__ import annotations

import numpy as np

from .backend import jit_kernel
from .bsdf import bsdf_eval_s, bsdf_pdf_s, bsdf_sample_s
from .core import cosine_dir_s, onb_s, to_world_s
from .encoding import encode_dir_into, encode_surface_into
from .geometry import T_FAR, intersect_bvh, occluded
from .lights import (camera_ray_s, env_eval_s, nee_pdf_for_env_s,
                     nee_pdf_for_hit_s, sample_light_s)
from .mlp import mlp_forward_s
from .rng import (DIM_JITTER_X, DIM_JITTER_Y, DIMS_PER_VERTEX, OFF_BSDF_U,
                  OFF_CACHE, OFF_LIGHT_PICK, OFF_LIGHT_U, OFF_RR, OFF_TERM,
                  P_BASELINE, P_RENDER, P_TRAIN, U64, VERTEX_DIM_BASE,
                  rand_pair, rand_uniform, stream_key)
from .scene import ENV_NONE, MAT_MIRROR

MAXB = 64
RR_SURVIVE = 0.9
RR_START = 1  # 0-based vertex index where roulette begins

# estimator variants sharing one walk
MODE_PT = 0
MODE_TL = 1
MODE_BTH = 2
MODE_NIRC_SPH = 3
MODE_NRC_SPH = 4


@jit_kernel
def nee_contrib_s(scn, px, py, pz, nsx, nsy, nsz, gnx, gny, gnz,
                  mkind, ar, ag, ab, rough, wox, woy, woz,
                  u_pick, u1, u2, terminal):
    """One next-event sample at a surface vertex, visibility tested.

    terminal != 0 drops the MIS down-weight (no competing bsdf sample
    exists when the path stops here).
    """
    if scn.lt_kind.shape[0] == 0:
        return 0.0, 0.0, 0.0
    wix, wiy, wiz, dist, er, eg, eb, pdf, _src = sample_light_s(
        scn, px, py, pz, nsx, nsy, nsz, u_pick, u1, u2)
    if pdf <= 0.0:
        return 0.0, 0.0, 0.0
    cs = wix * nsx + wiy * nsy + wiz * nsz
    if cs <= 0.0:
        return 0.0, 0.0, 0.0
    fr, fg, fb = bsdf_eval_s(mkind, ar, ag, ab, rough,
                             nsx, nsy, nsz, wox, woy, woz, wix, wiy, wiz)
    if fr == 0.0 and fg == 0.0 and fb == 0.0:
        return 0.0, 0.0, 0.0
    sgn = 1.0 if (gnx * wix + gny * wiy + gnz * wiz) > 0.0 else -1.0
    ox = px + sgn * scn.eps * gnx
    oy = py + sgn * scn.eps * gny
    oz = pz + sgn * scn.eps * gnz
    t_lim = dist - 2.0 * scn.eps
    if t_lim <= 0.0:
        return 0.0, 0.0, 0.0
    if occluded(scn, ox, oy, oz, wix, wiy, wiz, t_lim):
        return 0.0, 0.0, 0.0
    if terminal != 0:
        w = 1.0
    else:
        pb = bsdf_pdf_s(mkind, rough, nsx, nsy, nsz,
                        wox, woy, woz, wix, wiy, wiz)
        w = pdf / (pdf + pb)
    s = w * cs / pdf
    return fr * er * s, fg * eg * s, fb * eb * s


@jit_kernel
def walk_record(scn, key, ox, oy, oz, dx, dy, dz,
                pv_pdf, pnsx, pnsy, pnsz,
                v_pos, v_ns, v_alb, v_rough, v_delta, v_wi, v_pdf,
                v_fcosp, v_nee, v_mise, v_emit, v_tgt, v_tfull, v_tnrc,
                v_envdir, v_envpdf, v_envvis, v_envrad, v_envok,
                collect_env):
    """Trace one recording path and fill per-vertex rows.

    pv_pdf is the solid-angle pdf the input ray was sampled with (< 0
    for camera rays and delta bounces: emission at the first hit then
    carries full weight). pns* is the shading normal at the ray origin,
    used only for the environment MIS pdf on escape.

    Returns (n, tr, tg, tb, fr, fg, fb): vertex count, the incident
    radiance estimate along the input ray with MIS-weighted emission,
    and the same estimate with raw (unweighted) emission.
    """
    n = 0
    esc = 0
    env_mr = env_mg = env_mb = 0.0
    env_rr = env_rg = env_rb = 0.0
    prev_pdf = pv_pdf
    cox, coy, coz = ox, oy, oz
    cdx, cdy, cdz = dx, dy, dz
    lnsx, lnsy, lnsz = pnsx, pnsy, pnsz
    for v in range(MAXB):
        hkind, prim, t, hx, hy, hz, gnx, gny, gnz, mid = intersect_bvh(
            scn, cox, coy, coz, cdx, cdy, cdz, T_FAR)
        if hkind < 0:
            if scn.env_kind != ENV_NONE:
                rr_, rg_, rb_ = env_eval_s(scn, cdx, cdy, cdz)
                env_rr, env_rg, env_rb = rr_, rg_, rb_
                if prev_pdf < 0.0:
                    w = 1.0
                else:
                    pn = nee_pdf_for_env_s(scn, lnsx, lnsy, lnsz,
                                           cdx, cdy, cdz)
                    w = prev_pdf / (prev_pdf + pn)
                env_mr, env_mg, env_mb = w * rr_, w * rg_, w * rb_
            esc = 1
            break
        wox, woy, woz = -cdx, -cdy, -cdz
        flip = 1.0 if (gnx * wox + gny * woy + gnz * woz) >= 0.0 else -1.0
        nsx, nsy, nsz = gnx * flip, gny * flip, gnz * flip
        er = scn.mat_emit[mid, 0]
        eg = scn.mat_emit[mid, 1]
        eb = scn.mat_emit[mid, 2]
        if er > 0.0 or eg > 0.0 or eb > 0.0:
            if prev_pdf < 0.0:
                w = 1.0
            else:
                pn = nee_pdf_for_hit_s(scn, hkind, prim, t,
                                       cdx, cdy, cdz, gnx, gny, gnz)
                w = prev_pdf / (prev_pdf + pn)
            v_mise[v, 0] = w * er
            v_mise[v, 1] = w * eg
            v_mise[v, 2] = w * eb
            v_emit[v, 0] = er
            v_emit[v, 1] = eg
            v_emit[v, 2] = eb
        else:
            v_mise[v, 0] = 0.0
            v_mise[v, 1] = 0.0
            v_mise[v, 2] = 0.0
            v_emit[v, 0] = 0.0
            v_emit[v, 1] = 0.0
            v_emit[v, 2] = 0.0
        mkind = scn.mat_kind[mid]
        delta = 1 if mkind == MAT_MIRROR else 0
        ar = scn.mat_albedo[mid, 0]
        ag = scn.mat_albedo[mid, 1]
        ab = scn.mat_albedo[mid, 2]
        rough = scn.mat_rough[mid]
        v_pos[v, 0] = hx
        v_pos[v, 1] = hy
        v_pos[v, 2] = hz
        v_ns[v, 0] = nsx
        v_ns[v, 1] = nsy
        v_ns[v, 2] = nsz
        v_alb[v, 0] = ar
        v_alb[v, 1] = ag
        v_alb[v, 2] = ab
        v_rough[v] = rough
        v_delta[v] = delta
        v_envok[v] = 0
        base = VERTEX_DIM_BASE + v * DIMS_PER_VERTEX
        nr = ng_ = nb = 0.0
        if delta == 0:
            up = rand_uniform(key, base + OFF_LIGHT_PICK)
            ul1, ul2 = rand_pair(key, base + OFF_LIGHT_U)
            nr, ng_, nb = nee_contrib_s(
                scn, hx, hy, hz, nsx, nsy, nsz, gnx, gny, gnz,
                mkind, ar, ag, ab, rough, wox, woy, woz, up, ul1, ul2, 0)
        v_nee[v, 0] = nr
        v_nee[v, 1] = ng_
        v_nee[v, 2] = nb
        if collect_env != 0 and delta == 0 and scn.env_kind != ENV_NONE:
            ue1, ue2 = rand_pair(key, base + OFF_CACHE)
            lx, ly, lz, pdf_e = cosine_dir_s(ue1, ue2)
            if pdf_e > 0.0:
                tx, ty, tz, bx, by, bz = onb_s(nsx, nsy, nsz)
                ex, ey, ez = to_world_s(lx, ly, lz, tx, ty, tz,
                                        bx, by, bz, nsx, nsy, nsz)
                sgn = 1.0 if (gnx * ex + gny * ey + gnz * ez) > 0.0 else -1.0
                sox = hx + sgn * scn.eps * gnx
                soy = hy + sgn * scn.eps * gny
                soz = hz + sgn * scn.eps * gnz
                vis = 0.0 if occluded(scn, sox, soy, soz, ex, ey, ez,
                                      T_FAR) else 1.0
                rr_, rg_, rb_ = env_eval_s(scn, ex, ey, ez)
                v_envdir[v, 0] = ex
                v_envdir[v, 1] = ey
                v_envdir[v, 2] = ez
                v_envpdf[v] = pdf_e
                v_envvis[v] = vis
                v_envrad[v, 0] = rr_
                v_envrad[v, 1] = rg_
                v_envrad[v, 2] = rb_
                v_envok[v] = 1
        alive = 1
        rr_div = 1.0
        if v >= RR_START:
            if rand_uniform(key, base + OFF_RR) >= RR_SURVIVE:
                alive = 0
            else:
                rr_div = RR_SURVIVE
        cont = 0
        if alive == 1 and v < MAXB - 1:
            ub1, ub2 = rand_pair(key, base + OFF_BSDF_U)
            wix, wiy, wiz, pdf, fx, fy, fz, isd = bsdf_sample_s(
                mkind, ar, ag, ab, rough, nsx, nsy, nsz,
                wox, woy, woz, ub1, ub2)
            if pdf > 0.0:
                ci = wix * nsx + wiy * nsy + wiz * nsz
                if ci > 0.0:
                    inv = 1.0 / (pdf * rr_div)
                    v_wi[v, 0] = wix
                    v_wi[v, 1] = wiy
                    v_wi[v, 2] = wiz
                    v_pdf[v] = -1.0 if isd == 1 else pdf
                    v_fcosp[v, 0] = fx * ci * inv
                    v_fcosp[v, 1] = fy * ci * inv
                    v_fcosp[v, 2] = fz * ci * inv
                    prev_pdf = -1.0 if isd == 1 else pdf
                    sgn = 1.0 if (gnx * wix + gny * wiy + gnz * wiz) > 0.0 \
                        else -1.0
                    cox = hx + sgn * scn.eps * gnx
                    coy = hy + sgn * scn.eps * gny
                    coz = hz + sgn * scn.eps * gnz
                    cdx, cdy, cdz = wix, wiy, wiz
                    lnsx, lnsy, lnsz = nsx, nsy, nsz
                    cont = 1
        if cont == 0:
            v_wi[v, 0] = 0.0
            v_wi[v, 1] = 0.0
            v_wi[v, 2] = 0.0
            v_pdf[v] = 0.0
            v_fcosp[v, 0] = 0.0
            v_fcosp[v, 1] = 0.0
            v_fcosp[v, 2] = 0.0
            n = v + 1
            break
        n = v + 1
    # Backward sweep: fold per-vertex data into radiance targets.
    lr = lg = lb = 0.0
    for v in range(n - 1, -1, -1):
        if v == n - 1:
            if esc == 1:
                cr, cg, cb = env_mr, env_mg, env_mb
                qr, qg, qb = env_rr, env_rg, env_rb
            else:
                cr = cg = cb = 0.0
                qr = qg = qb = 0.0
        else:
            cr = v_mise[v + 1, 0] + lr
            cg = v_mise[v + 1, 1] + lg
            cb = v_mise[v + 1, 2] + lb
            qr = v_emit[v + 1, 0] + lr
            qg = v_emit[v + 1, 1] + lg
            qb = v_emit[v + 1, 2] + lb
        v_tgt[v, 0] = cr
        v_tgt[v, 1] = cg
        v_tgt[v, 2] = cb
        v_tfull[v, 0] = qr
        v_tfull[v, 1] = qg
        v_tfull[v, 2] = qb
        lr = v_nee[v, 0] + v_fcosp[v, 0] * cr
        lg = v_nee[v, 1] + v_fcosp[v, 1] * cg
        lb = v_nee[v, 2] + v_fcosp[v, 2] * cb
        v_tnrc[v, 0] = lr
        v_tnrc[v, 1] = lg
        v_tnrc[v, 2] = lb
    if n == 0:
        return 0, env_mr, env_mg, env_mb, env_rr, env_rg, env_rb
    tr = v_mise[0, 0] + lr
    tg = v_mise[0, 1] + lg
    tb = v_mise[0, 2] + lb
    fr = v_emit[0, 0] + lr
    fg = v_emit[0, 1] + lg
    fb = v_emit[0, 2] + lb
    return n, tr, tg, tb, fr, fg, fb


@jit_kernel
def collect_paths_kernel(scn, cam, seed, frame, a_pos, a_ns, a_alb, a_rough,
                         a_delta, a_wi, a_pdf, a_fcosp, a_nee, a_mise,
                         a_emit, a_tgt, a_tfull, a_tnrc, a_envdir, a_envpdf,
                         a_envvis, a_envrad, a_envok, a_n, collect_env):
    """Trace one recording path per row from jittered camera positions."""
    w = cam[14]
    h = cam[15]
    for p in range(a_pos.shape[0]):
        key = stream_key(U64(seed), P_TRAIN, U64(frame), U64(p), U64(0))
        sx = rand_uniform(key, DIM_JITTER_X) * w
        sy = rand_uniform(key, DIM_JITTER_Y) * h
        ix = int(sx)
        iy = int(sy)
        ox, oy, oz, dx, dy, dz = camera_ray_s(cam, ix, iy,
                                              sx - ix, sy - iy)
        res = walk_record(
            scn, key, ox, oy, oz, dx, dy, dz, -1.0, 0.0, 0.0, 0.0,
            a_pos[p], a_ns[p], a_alb[p], a_rough[p], a_delta[p], a_wi[p],
            a_pdf[p], a_fcosp[p], a_nee[p], a_mise[p], a_emit[p], a_tgt[p],
            a_tfull[p], a_tnrc[p], a_envdir[p], a_envpdf[p], a_envvis[p],
            a_envrad[p], a_envok[p], collect_env)
        a_n[p] = res[0]


@jit_kernel
def incident_targets_kernel(scn, seed, frame, ox, oy, oz, dx, dy, dz,
                            pv_pdf, pnsx, pnsy, pnsz, out, out_full,
                            v_pos, v_ns, v_alb, v_rough, v_delta, v_wi,
                            v_pdf, v_fcosp, v_nee, v_mise, v_emit, v_tgt,
                            v_tfull, v_tnrc, v_envdir, v_envpdf, v_envvis,
                            v_envrad, v_envok):
    """Repeated incident-radiance estimates along one fixed ray.

    Each row of out gets an independent estimate; out_full carries the
    variant with raw emission at the first hit.
    """
    for i in range(out.shape[0]):
        key = stream_key(U64(seed), P_TRAIN, U64(frame), U64(i), U64(0))
        res = walk_record(
            scn, key, ox, oy, oz, dx, dy, dz, pv_pdf, pnsx, pnsy, pnsz,
            v_pos, v_ns, v_alb, v_rough, v_delta, v_wi, v_pdf, v_fcosp,
            v_nee, v_mise, v_emit, v_tgt, v_tfull, v_tnrc, v_envdir,
            v_envpdf, v_envvis, v_envrad, v_envok, 0)
        out[i, 0] = res[1]
        out[i, 1] = res[2]
        out[i, 2] = res[3]
        out_full[i, 0] = res[4]
        out_full[i, 1] = res[5]
        out_full[i, 2] = res[6]


@jit_kernel
def integrand_samples_kernel(scn, cam, seed, frame, per_round,
                             v_pos, v_ns, v_alb, v_rough, v_delta, v_wi,
                             v_pdf, v_fcosp, v_nee, v_mise, v_emit, v_tgt,
                             v_tfull, v_tnrc, v_envdir, v_envpdf, v_envvis,
                             v_envrad, v_envok,
                             o_dir, o_f, o_frc, o_pdf, o_valid,
                             o_spos, o_sns, o_salb, o_srough):
    """Per-pixel integrand samples at the center-ray primary hit.

    For each valid pixel (a non-delta surface under the center ray)
    draws per_round brdf directions and estimates the full reflection
    integrand f = L_i * f_r * cos with one recording walk each.  o_f
    gets the integrand sample, o_frc the brdf-times-cosine factor on
    its own, o_pdf the direction pdf (0 marks a dead draw).  Surface
    data lands in o_s* so callers can key per-pixel models off it.
    """
    w = int(cam[14])
    h = int(cam[15])
    for p in range(w * h):
        o_valid[p] = 0
        ix = p % w
        iy = p // w
        ox, oy, oz, dx, dy, dz = camera_ray_s(cam, ix, iy, 0.5, 0.5)
        hkind, prim, t, hx, hy, hz, gnx, gny, gnz, mid = intersect_bvh(
            scn, ox, oy, oz, dx, dy, dz, T_FAR)
        if hkind < 0:
            continue
        mkind = scn.mat_kind[mid]
        if mkind == MAT_MIRROR:
            continue
        wox, woy, woz = -dx, -dy, -dz
        flip = 1.0 if (gnx * wox + gny * woy + gnz * woz) >= 0.0 else -1.0
        nsx, nsy, nsz = gnx * flip, gny * flip, gnz * flip
        ar = scn.mat_albedo[mid, 0]
        ag = scn.mat_albedo[mid, 1]
        ab = scn.mat_albedo[mid, 2]
        rough = scn.mat_rough[mid]
        o_valid[p] = 1
        o_spos[p, 0] = hx
        o_spos[p, 1] = hy
        o_spos[p, 2] = hz
        o_sns[p, 0] = nsx
        o_sns[p, 1] = nsy
        o_sns[p, 2] = nsz
        o_salb[p, 0] = ar
        o_salb[p, 1] = ag
        o_salb[p, 2] = ab
        o_srough[p] = rough
        for k in range(per_round):
            o_pdf[p, k] = 0.0
            key = stream_key(U64(seed), P_BASELINE, U64(frame),
                             U64(p), U64(k))
            u1, u2 = rand_pair(key, 2)
            wix, wiy, wiz, pdf, fx, fy, fz, isd = bsdf_sample_s(
                mkind, ar, ag, ab, rough, nsx, nsy, nsz,
                wox, woy, woz, u1, u2)
            if pdf <= 0.0 or isd == 1:
                continue
            ci = wix * nsx + wiy * nsy + wiz * nsz
            if ci <= 0.0:
                continue
            sgn = 1.0 if (gnx * wix + gny * wiy + gnz * wiz) > 0.0 else -1.0
            sx = hx + sgn * scn.eps * gnx
            sy = hy + sgn * scn.eps * gny
            sz = hz + sgn * scn.eps * gnz
            res = walk_record(
                scn, key, sx, sy, sz, wix, wiy, wiz, pdf, nsx, nsy, nsz,
                v_pos, v_ns, v_alb, v_rough, v_delta, v_wi, v_pdf,
                v_fcosp, v_nee, v_mise, v_emit, v_tgt, v_tfull, v_tnrc,
                v_envdir, v_envpdf, v_envvis, v_envrad, v_envok, 0)
            o_dir[p, k, 0] = wix
            o_dir[p, k, 1] = wiy
            o_dir[p, k, 2] = wiz
            o_frc[p, k, 0] = fx * ci
            o_frc[p, k, 1] = fy * ci
            o_frc[p, k, 2] = fz * ci
            o_f[p, k, 0] = res[1] * fx * ci
            o_f[p, k, 1] = res[2] * fy * ci
            o_f[p, k, 2] = res[3] * fz * ci
            o_pdf[p, k] = pdf


@jit_kernel
def cache_lc_s(spec, theta, xin, h1, h2, key, base, nsamp,
               mkind, ar, ag, ab, rough, nsx, nsy, nsz, wox, woy, woz):
    """Cache-integral shading term: mean over nsamp brdf-sampled
    directions of n(w) * f * cos / pdf.  The surface must already be
    encoded into xin; this routine only rewrites the direction block.
    """
    sr = sg = sb = 0.0
    for k in range(nsamp):
        u1, u2 = rand_pair(key, base + OFF_CACHE + 2 * k)
        wix, wiy, wiz, pdf, fx, fy, fz, isd = bsdf_sample_s(
            mkind, ar, ag, ab, rough, nsx, nsy, nsz, wox, woy, woz, u1, u2)
        if pdf <= 0.0 or isd == 1:
            continue
        ci = wix * nsx + wiy * nsy + wiz * nsz
        if ci <= 0.0:
            continue
        encode_dir_into(spec, wix, wiy, wiz, xin)
        qr, qg, qb = mlp_forward_s(spec, theta, xin, h1, h2)
        s = ci / pdf
        sr += qr * fx * s
        sg += qg * fy * s
        sb += qb * fz * s
    inv = 1.0 / nsamp
    return sr * inv, sg * inv, sb * inv


@jit_kernel
def trace_sample(scn, key, ox, oy, oz, dx, dy, dz, mode, v1, cache_on,
                 spec, theta, nc, nb, rough_cut, sph_c, max_cv, rr_survive,
                 xin, h1, h2):
    """One radiance sample through any of the estimator modes.

    Shared walk: brdf sampling with next-event estimation and MIS,
    roulette from the second vertex.  MODE_PT ignores the cache.
    MODE_TL adds the cache integral at up to max_cv rough vertices and
    subtracts the cache prediction along the continuation so only the
    residual rides the rest of the path.  The biased modes stop paths
    early (spread test, stochastic brdf test, or a per-pixel v1 flag)
    and shade the stop vertex from the cache.

    nc holds the per-cache-vertex direction counts for MODE_TL; nb is
    the count used both in the stop probability and at biased stop
    vertices.  v1 comes from the caller's per-pixel map and only the
    *_SPH modes look at it.  Returns (r, g, b, vertex count); a camera
    ray that escapes directly counts zero vertices.
    """
    accr = accg = accb = 0.0
    tr = tg = tb = 1.0
    prev_pdf = -1.0
    lnsx = lnsy = lnsz = 0.0
    cox, coy, coz = ox, oy, oz
    cdx, cdy, cdz = dx, dy, dz
    cu = 0
    a0 = 0.0
    a_sp = 1.0
    term = 0
    for v in range(MAXB):
        hkind, prim, t, hx, hy, hz, gnx, gny, gnz, mid = intersect_bvh(
            scn, cox, coy, coz, cdx, cdy, cdz, T_FAR)
        if hkind < 0:
            if scn.env_kind != ENV_NONE:
                er, eg, eb = env_eval_s(scn, cdx, cdy, cdz)
                if prev_pdf < 0.0:
                    w = 1.0
                else:
                    pn = nee_pdf_for_env_s(scn, lnsx, lnsy, lnsz,
                                           cdx, cdy, cdz)
                    w = prev_pdf / (prev_pdf + pn)
                accr += tr * w * er
                accg += tg * w * eg
                accb += tb * w * eb
            break
        term = v + 1
        wox, woy, woz = -cdx, -cdy, -cdz
        flip = 1.0 if (gnx * wox + gny * woy + gnz * woz) >= 0.0 else -1.0
        nsx, nsy, nsz = gnx * flip, gny * flip, gnz * flip
        er = scn.mat_emit[mid, 0]
        eg = scn.mat_emit[mid, 1]
        eb = scn.mat_emit[mid, 2]
        if er > 0.0 or eg > 0.0 or eb > 0.0:
            if prev_pdf < 0.0:
                w = 1.0
            else:
                pn = nee_pdf_for_hit_s(scn, hkind, prim, t,
                                       cdx, cdy, cdz, gnx, gny, gnz)
                w = prev_pdf / (prev_pdf + pn)
            accr += tr * w * er
            accg += tg * w * eg
            accb += tb * w * eb
        mkind = scn.mat_kind[mid]
        ar = scn.mat_albedo[mid, 0]
        ag = scn.mat_albedo[mid, 1]
        ab = scn.mat_albedo[mid, 2]
        rough = scn.mat_rough[mid]
        base = VERTEX_DIM_BASE + v * DIMS_PER_VERTEX
        if mkind == MAT_MIRROR:
            # Delta vertex: no light sampling, no stop tests, the
            # bounce is deterministic up to roulette.
            rr_div = 1.0
            if v >= RR_START:
                if rand_uniform(key, base + OFF_RR) >= rr_survive:
                    break
                rr_div = rr_survive
            ub1, ub2 = rand_pair(key, base + OFF_BSDF_U)
            wix, wiy, wiz, pdf, fx, fy, fz, isd = bsdf_sample_s(
                mkind, ar, ag, ab, rough, nsx, nsy, nsz,
                wox, woy, woz, ub1, ub2)
            if pdf <= 0.0:
                break
            ci = wix * nsx + wiy * nsy + wiz * nsz
            if ci <= 0.0:
                break
            inv = 1.0 / (pdf * rr_div)
            tr *= fx * ci * inv
            tg *= fy * ci * inv
            tb *= fz * ci * inv
            prev_pdf = -1.0
            sgn = 1.0 if (gnx * wix + gny * wiy + gnz * wiz) > 0.0 else -1.0
            cox = hx + sgn * scn.eps * gnx
            coy = hy + sgn * scn.eps * gny
            coz = hz + sgn * scn.eps * gnz
            cdx, cdy, cdz = wix, wiy, wiz
            lnsx, lnsy, lnsz = nsx, nsy, nsz
            continue
        if mode <= MODE_TL:
            up = rand_uniform(key, base + OFF_LIGHT_PICK)
            ul1, ul2 = rand_pair(key, base + OFF_LIGHT_U)
            qr, qg, qb = nee_contrib_s(
                scn, hx, hy, hz, nsx, nsy, nsz, gnx, gny, gnz,
                mkind, ar, ag, ab, rough, wox, woy, woz, up, ul1, ul2, 0)
            accr += tr * qr
            accg += tg * qg
            accb += tb * qb
            subtract = 0
            if mode == MODE_TL and cache_on == 1 and rough >= rough_cut \
                    and cu < max_cv:
                ncq = nc[cu]
                cu += 1
                if ncq > 0:
                    encode_surface_into(spec, theta, hx, hy, hz,
                                        nsx, nsy, nsz, ar, ag, ab,
                                        rough, xin)
                    lcr, lcg, lcb = cache_lc_s(
                        spec, theta, xin, h1, h2, key, base, ncq,
                        mkind, ar, ag, ab, rough, nsx, nsy, nsz,
                        wox, woy, woz)
                    accr += tr * lcr
                    accg += tg * lcg
                    accb += tb * lcb
                    subtract = 1
            rr_div = 1.0
            if v >= RR_START:
                if rand_uniform(key, base + OFF_RR) >= rr_survive:
                    break
                rr_div = rr_survive
            ub1, ub2 = rand_pair(key, base + OFF_BSDF_U)
            wix, wiy, wiz, pdf, fx, fy, fz, isd = bsdf_sample_s(
                mkind, ar, ag, ab, rough, nsx, nsy, nsz,
                wox, woy, woz, ub1, ub2)
            if pdf <= 0.0:
                break
            ci = wix * nsx + wiy * nsy + wiz * nsz
            if ci <= 0.0:
                break
            inv = 1.0 / (pdf * rr_div)
            tr *= fx * ci * inv
            tg *= fy * ci * inv
            tb *= fz * ci * inv
            if subtract == 1:
                # Remove the cache prediction along the continuation:
                # downstream the walk estimates incident radiance, so
                # what rides T from here is the residual L_i - n.
                encode_dir_into(spec, wix, wiy, wiz, xin)
                qr, qg, qb = mlp_forward_s(spec, theta, xin, h1, h2)
                accr -= tr * qr
                accg -= tg * qg
                accb -= tb * qb
            prev_pdf = pdf
            sgn = 1.0 if (gnx * wix + gny * wiy + gnz * wiz) > 0.0 else -1.0
            cox = hx + sgn * scn.eps * gnx
            coy = hy + sgn * scn.eps * gny
            coz = hz + sgn * scn.eps * gnz
            cdx, cdy, cdz = wix, wiy, wiz
            lnsx, lnsy, lnsz = nsx, nsy, nsz
        else:
            # Biased family: maintain the relative-footprint state and
            # decide whether this vertex ends the path.
            cs_arr = wox * nsx + woy * nsy + woz * nsz
            if v == 0:
                if cs_arr > 0.0:
                    a0 = t * t / (4.0 * np.pi * cs_arr)
            elif prev_pdf > 0.0 and cs_arr > 0.0:
                fac = t / (prev_pdf * cs_arr)
                a_sp *= fac * fac
            stop = 0
            have_cont = 0
            wix = wiy = wiz = 0.0
            pdfc = 0.0
            fx = fy = fz = 0.0
            if cs_arr <= 0.0:
                stop = 1
            elif mode == MODE_BTH:
                # Stochastic brdf test at every non-delta vertex, with
                # the spread test joining in from the second bounce.
                if v >= 1 and a_sp > sph_c * a0:
                    stop = 1
                else:
                    ub1, ub2 = rand_pair(key, base + OFF_BSDF_U)
                    wix, wiy, wiz, pdfc, fx, fy, fz, isd = bsdf_sample_s(
                        mkind, ar, ag, ab, rough, nsx, nsy, nsz,
                        wox, woy, woz, ub1, ub2)
                    ps = 0.0
                    if pdfc > 0.0 and isd == 0:
                        ci = wix * nsx + wiy * nsy + wiz * nsz
                        if ci > 0.0:
                            have_cont = 1
                            ps = pdfc / (pdfc + nb / np.pi)
                    if rand_uniform(key, base + OFF_TERM) > ps:
                        stop = 1
            else:
                if v == 0:
                    if v1 == 1 and (mode == MODE_NIRC_SPH
                                    or rough >= rough_cut):
                        stop = 1
                elif a_sp > sph_c * a0:
                    stop = 1
            if stop == 1:
                if mode == MODE_NRC_SPH:
                    if cache_on == 1:
                        encode_surface_into(spec, theta, hx, hy, hz,
                                            nsx, nsy, nsz, ar, ag, ab,
                                            rough, xin)
                        encode_dir_into(spec, wox, woy, woz, xin)
                        qr, qg, qb = mlp_forward_s(spec, theta,
                                                   xin, h1, h2)
                        accr += tr * qr
                        accg += tg * qg
                        accb += tb * qb
                else:
                    up = rand_uniform(key, base + OFF_LIGHT_PICK)
                    ul1, ul2 = rand_pair(key, base + OFF_LIGHT_U)
                    qr, qg, qb = nee_contrib_s(
                        scn, hx, hy, hz, nsx, nsy, nsz, gnx, gny, gnz,
                        mkind, ar, ag, ab, rough, wox, woy, woz,
                        up, ul1, ul2, 0)
                    accr += tr * qr
                    accg += tg * qg
                    accb += tb * qb
                    if cache_on == 1:
                        encode_surface_into(spec, theta, hx, hy, hz,
                                            nsx, nsy, nsz, ar, ag, ab,
                                            rough, xin)
                        lcr, lcg, lcb = cache_lc_s(
                            spec, theta, xin, h1, h2, key, base, nb,
                            mkind, ar, ag, ab, rough, nsx, nsy, nsz,
                            wox, woy, woz)
                        accr += tr * lcr
                        accg += tg * lcg
                        accb += tb * lcb
                break
            up = rand_uniform(key, base + OFF_LIGHT_PICK)
            ul1, ul2 = rand_pair(key, base + OFF_LIGHT_U)
            qr, qg, qb = nee_contrib_s(
                scn, hx, hy, hz, nsx, nsy, nsz, gnx, gny, gnz,
                mkind, ar, ag, ab, rough, wox, woy, woz, up, ul1, ul2, 0)
            accr += tr * qr
            accg += tg * qg
            accb += tb * qb
            rr_div = 1.0
            if v >= RR_START:
                if rand_uniform(key, base + OFF_RR) >= rr_survive:
                    break
                rr_div = rr_survive
            if have_cont == 0:
                ub1, ub2 = rand_pair(key, base + OFF_BSDF_U)
                wix, wiy, wiz, pdfc, fx, fy, fz, isd = bsdf_sample_s(
                    mkind, ar, ag, ab, rough, nsx, nsy, nsz,
                    wox, woy, woz, ub1, ub2)
                if pdfc <= 0.0:
                    break
                ci = wix * nsx + wiy * nsy + wiz * nsz
                if ci <= 0.0:
                    break
            ci = wix * nsx + wiy * nsy + wiz * nsz
            inv = 1.0 / (pdfc * rr_div)
            tr *= fx * ci * inv
            tg *= fy * ci * inv
            tb *= fz * ci * inv
            prev_pdf = pdfc
            sgn = 1.0 if (gnx * wix + gny * wiy + gnz * wiz) > 0.0 else -1.0
            cox = hx + sgn * scn.eps * gnx
            coy = hy + sgn * scn.eps * gny
            coz = hz + sgn * scn.eps * gnz
            cdx, cdy, cdz = wix, wiy, wiz
            lnsx, lnsy, lnsz = nsx, nsy, nsz
    return accr, accg, accb, term


@jit_kernel
def render_kernel(scn, cam, mode, seed, frame, spp, v1_map, cache_on,
                  spec, theta, nc, nb, rough_cut, sph_c, max_cv,
                  rr_survive, img, img2, term_sum):
    """Accumulate spp samples per pixel into sum / sum-of-squares / path
    length buffers.  Callers divide by spp afterwards.  v1_map is one
    flag per pixel in row-major order."""
    w = int(cam[14])
    h = int(cam[15])
    mw = 0
    for i in range(spec.dims.shape[0]):
        if spec.dims[i] > mw:
            mw = spec.dims[i]
    xin = np.zeros(spec.in_dim, np.float32)
    h1 = np.zeros(mw, np.float32)
    h2 = np.zeros(mw, np.float32)
    for iy in range(h):
        for ix in range(w):
            pix = iy * w + ix
            v1 = v1_map[pix]
            for s in range(spp):
                key = stream_key(U64(seed), P_RENDER, U64(frame),
                                 U64(pix), U64(s))
                jx = rand_uniform(key, DIM_JITTER_X)
                jy = rand_uniform(key, DIM_JITTER_Y)
                ox, oy, oz, dx, dy, dz = camera_ray_s(cam, ix, iy, jx, jy)
                r, g, b, term = trace_sample(
                    scn, key, ox, oy, oz, dx, dy, dz, mode, v1, cache_on,
                    spec, theta, nc, nb, rough_cut, sph_c, max_cv,
                    rr_survive, xin, h1, h2)
                img[iy, ix, 0] += r
                img[iy, ix, 1] += g
                img[iy, ix, 2] += b
                img2[iy, ix, 0] += r * r
                img2[iy, ix, 1] += g * g
                img2[iy, ix, 2] += b * b
                term_sum[iy, ix] += term
