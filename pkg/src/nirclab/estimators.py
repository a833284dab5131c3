"""Rendering estimators over the shared path-walk kernel.

One megakernel walks every variant: plain path tracing, the two-level
cache/residual estimator, and the biased early-stop family (stochastic
brdf test or footprint-spread test, shading stop vertices from a
cache).  This module owns the python-facing configuration, the
per-vertex math as standalone ops for tests, image-level drivers, and
the epsilon-sweep analysis built on cached converged renders.

Seed discipline: a render consumes only the per-pixel render streams,
so training, measurement and baseline fitting never collide with it.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .bsdf import bsdf_sample
from .caches import sample_incident_targets
from .errors import ConfigError
from .geometry import T_FAR, occluded
from .kernels import (MODE_BTH, MODE_NIRC_SPH, MODE_NRC_SPH, MODE_PT,
                      MODE_TL, render_kernel, trace_sample)
from .lights import camera_ray_s
from .metrics import bias_variance_decompose, mrse
from .mlp import ACT_RELU, init_theta, make_spec
from .pfm import read_pfm, write_pfm
from .rng import (DIM_JITTER_X, DIM_JITTER_Y, P_MEASURE, P_RENDER, U64,
                  rand_uniform, stream_key, uniform_array)
from .scene import MAT_MIRROR

MODES = {
    "pt": MODE_PT,
    "two-level": MODE_TL,
    "biased-nirc-bth": MODE_BTH,
    "biased-nirc-sph": MODE_NIRC_SPH,
    "biased-nrc-sph": MODE_NRC_SPH,
}

# OFF_CACHE leaves room for 28 direction pairs per vertex block
MAX_DIRS = 28


@dataclass
class EstimatorConfig:
    """Knobs shared by every render mode; unused ones are ignored.

    nc allocates cache directions per cache vertex for the two-level
    estimator (a zero turns the cache off at that vertex).  nbias is
    the direction count at biased stop vertices and also sets the
    stop probability of the stochastic brdf test.
    """

    mode: str = "pt"
    nc: tuple = (15, 5, 5)
    nbias: int = 5
    nr: int = 1
    max_cache_vertices: int = 3
    sph_c: float = 0.01
    rr: float = 0.1
    roughness_cutoff: float = 0.0625

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown estimator mode '{self.mode}'")
        if len(self.nc) < self.max_cache_vertices:
            raise ConfigError("nc must cover max_cache_vertices entries")
        for v in self.nc:
            if not 0 <= int(v) <= MAX_DIRS:
                raise ConfigError(f"nc entry {v} outside 0..{MAX_DIRS}")
        if not 1 <= self.nbias <= MAX_DIRS:
            raise ConfigError(f"nbias {self.nbias} outside 1..{MAX_DIRS}")
        if self.nr != 1:
            raise ConfigError("the walk carries exactly one residual "
                              "sample per cache vertex")
        if not 0.0 <= self.rr < 1.0:
            raise ConfigError(f"roulette probability {self.rr} not in [0,1)")
        if self.sph_c <= 0.0:
            raise ConfigError("spread threshold must be positive")


@dataclass
class PathState:
    """Per-path bookkeeping mirrored by the kernel's locals."""

    throughput: np.ndarray = field(default_factory=lambda: np.ones(3))
    vertex: int = 0
    a: float = 1.0
    a0: float = 0.0
    alive: bool = True
    prev_pdf: float = -1.0


def sph_update(state, seg_len, pdf, cos_arrival):
    """Fold one traced segment into the footprint state.

    The first segment (camera to first hit) sets the reference spread
    a0; later segments multiply the running spread a by
    (len / (pdf * cos))^2.  pdf <= 0 marks a delta bounce, which
    leaves the spread unchanged.  A non-positive arrival cosine makes
    the state terminal (a becomes inf).
    """
    s = replace(state, vertex=state.vertex + 1, prev_pdf=pdf)
    if cos_arrival <= 0.0:
        s.a = math.inf
        return s
    if state.vertex == 0:
        s.a0 = seg_len * seg_len / (4.0 * math.pi * cos_arrival)
        return s
    if pdf > 0.0:
        f = seg_len / (pdf * cos_arrival)
        s.a = state.a * f * f
    return s


def sph_should_terminate(state, c=0.01):
    """Spread test: fires from the second bounce once a > c * a0."""
    return state.vertex >= 2 and state.a > c * state.a0


def bth_continuation_probability(pdf, n_cache):
    """Survival probability of the stochastic brdf test.

    pdf / (pdf + n_cache / pi): high for sharp lobes, low when the
    cache integral (n_cache directions) is cheap by comparison.
    """
    if pdf < 0.0 or not math.isfinite(pdf):
        raise ConfigError(f"pdf {pdf} must be finite and non-negative")
    if n_cache < 1:
        raise ConfigError("n_cache must be at least 1")
    return pdf / (pdf + n_cache / math.pi)


@dataclass
class RenderResult:
    """Per-pixel sums reduced to mean / sample variance / path length."""

    image: np.ndarray       # (h, w, 3) sample mean
    sample_var: np.ndarray  # (h, w, 3) per-sample variance, ddof=1
    path_length: np.ndarray  # (h, w) mean terminal vertex count
    spp: int
    mode: str

    @property
    def avg_path_length(self):
        return float(np.mean(self.path_length))

    @property
    def pct_ir_bounces(self):
        """Mean terminal vertex index minus one (camera misses count 0)."""
        return self.avg_path_length - 1.0


_NULL_NET = None


def _null_net():
    """Tiny placeholder net for renders that never touch a cache."""
    global _NULL_NET
    if _NULL_NET is None:
        spec = make_spec(levels=1, table=16, feats=2, bands=1, depth=1,
                         width=8, out_dim=3, out_act=ACT_RELU,
                         bb_min=np.zeros(3), bb_ext=np.ones(3))
        _NULL_NET = (spec, init_theta(spec, seed=0))
    return _NULL_NET


def render(scene, config=None, cache=None, seed=0, spp=1, frame=0,
           v1_map=None, force_cache=False):
    """Render the scene with the configured estimator.

    cache supplies the neural net for the two-level and biased modes
    (ignored for pt).  An all-zero cache is algebraically identical to
    no cache, so by default its queries are skipped; force_cache keeps
    them anyway, which lets tests confirm the identity bit for bit.
    v1_map optionally flags pixels (row-major) where the *_sph modes
    may stop at the first vertex.
    """
    if config is None:
        config = EstimatorConfig()
    mode = MODES[config.mode]
    w = int(scene.camera[14])
    h = int(scene.camera[15])
    cache_on = 0
    if mode != MODE_PT and cache is not None:
        if force_cache or not cache.is_zero:
            cache_on = 1
    if cache_on == 1:
        spec, theta = cache.spec, cache.theta
    else:
        spec, theta = _null_net()
    if v1_map is None:
        v1 = np.zeros(w * h, np.uint8)
    else:
        v1 = np.ascontiguousarray(
            np.asarray(v1_map, np.uint8).reshape(w * h))
    nc = np.asarray(config.nc[:config.max_cache_vertices], np.int64)
    img = np.zeros((h, w, 3))
    img2 = np.zeros((h, w, 3))
    term = np.zeros((h, w))
    render_kernel(scene.pack, scene.camera, mode, np.uint64(seed),
                  np.uint64(frame), spp, v1, cache_on, spec, theta,
                  nc, int(config.nbias), float(config.roughness_cutoff),
                  float(config.sph_c), int(config.max_cache_vertices),
                  1.0 - float(config.rr), img, img2, term)
    mean = img / spp
    if spp > 1:
        var = (img2 - img * img / spp) / (spp - 1)
        np.maximum(var, 0.0, out=var)
    else:
        var = np.zeros_like(img)
    return RenderResult(mean, var, term / spp, spp, config.mode)


def render_two_level(scene, cache, seed=0, spp=1, frame=0, config=None,
                     force_cache=False):
    """Cache-plus-residual render; any cache state keeps the mean."""
    if config is None:
        config = EstimatorConfig(mode="two-level")
    if config.mode != "two-level":
        raise ConfigError(f"config mode '{config.mode}' is not two-level")
    return render(scene, config, cache, seed, spp, frame,
                  force_cache=force_cache)


def render_biased(scene, cache, config, seed=0, spp=1, frame=0,
                  v1_map=None):
    """Early-stop render shading stop vertices from the cache."""
    if not config.mode.startswith("biased-"):
        raise ConfigError(f"config mode '{config.mode}' is not biased")
    return render(scene, config, cache, seed, spp, frame, v1_map=v1_map,
                  force_cache=True)


def pt_radiance(scene, ix, iy, seed=0, sample=0, frame=0):
    """One path-traced radiance sample for a pixel, as the renderer
    would draw it.  Returns an rgb array."""
    spec, theta = _null_net()
    w = int(scene.camera[14])
    pix = iy * w + ix
    key = stream_key(U64(seed), P_RENDER, U64(frame), U64(pix), U64(sample))
    jx = rand_uniform(key, DIM_JITTER_X)
    jy = rand_uniform(key, DIM_JITTER_Y)
    ox, oy, oz, dx, dy, dz = camera_ray_s(scene.camera, ix, iy, jx, jy)
    mw = int(max(spec.dims))
    r, g, b, _ = trace_sample(
        scene.pack, key, ox, oy, oz, dx, dy, dz, MODE_PT, 0, 0,
        spec, theta, np.zeros(3, np.int64), 1, 0.0625, 0.01, 3, 0.9,
        np.zeros(spec.in_dim, np.float32),
        np.zeros(mw, np.float32), np.zeros(mw, np.float32))
    return np.array([r, g, b])


def _surface_dirs(scene, it, n, seed, stream, offset):
    """n brdf draws at a surface: (dirs, pdf, f, cos), invalid rows
    flagged by pdf == 0."""
    u = uniform_array(seed, P_MEASURE, stream, 2 * n, offset=offset)
    dirs = np.zeros((n, 3))
    pdf = np.zeros(n)
    fval = np.zeros((n, 3))
    cos = np.zeros(n)
    for k in range(n):
        wi, p, f, dlt = bsdf_sample(scene, it, u[2 * k], u[2 * k + 1])
        if dlt or p <= 0.0:
            continue
        c = float(wi @ it.ns)
        if c <= 0.0:
            continue
        dirs[k] = wi
        pdf[k] = p
        fval[k] = f
        cos[k] = c
    return dirs, pdf, fval, cos


def estimate_Lc(scene, it, cache, n_c=15, seed=0, stream=0):
    """Cache term of the two-level split at one surface interaction:
    mean over n_c brdf-sampled directions of n(w) * f * cos / pdf.
    Draws with zero pdf or below the horizon contribute zero."""
    if scene.pack.mat_kind[it.mat] == MAT_MIRROR:
        raise ConfigError("cache term undefined on a delta lobe")
    if n_c < 1:
        raise ConfigError("n_c must be at least 1")
    dirs, pdf, fval, cos = _surface_dirs(scene, it, n_c, seed, stream, 0)
    out = np.zeros(3)
    ok = pdf > 0.0
    if np.any(ok):
        pred = cache.nirc_query(it, dirs[ok])
        wgt = cos[ok] / pdf[ok]
        out = np.sum(pred * fval[ok] * wgt[:, None], axis=0)
    return out / n_c


def estimate_Lr(scene, it, cache, n_r=1, seed=0, stream=0):
    """Residual term of the split: mean over n_r fresh brdf draws of
    (L_i(w) - n(w)) * f * cos / pdf, with L_i estimated by an
    independent recording walk along w.  Negative values are kept;
    they are what cancels cache over-prediction in expectation.
    """
    if scene.pack.mat_kind[it.mat] == MAT_MIRROR:
        raise ConfigError("residual term undefined on a delta lobe")
    if n_r < 1:
        raise ConfigError("n_r must be at least 1")
    # offset 1000 keeps these draws off the cache-term dimensions
    dirs, pdf, fval, cos = _surface_dirs(scene, it, n_r, seed, stream, 1000)
    out = np.zeros(3)
    for k in range(n_r):
        if pdf[k] <= 0.0:
            continue
        li, _ = sample_incident_targets(
            scene, it.position, dirs[k], seed + 7919 * (stream + 1), 1,
            prev_pdf=pdf[k], prev_ns=it.ns, frame=k)
        pred = cache.nirc_query(it, dirs[k][None, :])[0]
        out += (li[0] - pred) * fval[k] * (cos[k] / pdf[k])
    return out / n_r


def estimate_env_direct(scene, cache, it, n_c=15, n_r=1, seed=0, stream=0):
    """Two-level estimate of reflected direct environment light at one
    interaction.  The cache predicts per-direction incident light (a
    visibility cache is scaled by the known environment radiance); a
    few shadow-rayed residual directions keep the mean honest.
    """
    if scene.pack.env_kind == 0:
        raise ConfigError("scene has no environment light")
    dirs, pdf, fval, cos = _surface_dirs(scene, it, n_c, seed, stream, 0)
    out = np.zeros(3)
    ok = pdf > 0.0
    if np.any(ok):
        pred = _env_prediction(scene, cache, it, dirs[ok])
        wgt = cos[ok] / pdf[ok]
        out += np.sum(pred * fval[ok] * wgt[:, None], axis=0) / n_c
    dirs, pdf, fval, cos = _surface_dirs(scene, it, n_r, seed, stream, 1000)
    ok = pdf > 0.0
    if np.any(ok):
        pred = _env_prediction(scene, cache, it, dirs[ok])
        true = np.zeros_like(pred)
        for j, k in enumerate(np.nonzero(ok)[0]):
            if not _shadowed(scene, it, dirs[k]):
                true[j] = scene.env_radiance(dirs[k])
        wgt = cos[ok] / pdf[ok]
        out += np.sum((true - pred) * fval[ok] * wgt[:, None], axis=0) / n_r
    return out


def _env_prediction(scene, cache, it, dirs):
    if cache.kind == "nvc":
        vis = cache.nvc_query(it, dirs)
        env = np.array([scene.env_radiance(d) for d in dirs])
        return vis * env
    return cache.nirc_query(it, dirs)


def _shadowed(scene, it, wi):
    p = it.position
    g = it.ng
    sgn = 1.0 if float(g @ wi) > 0.0 else -1.0
    eps = scene.pack.eps
    return bool(occluded(scene.pack,
                         p[0] + sgn * eps * g[0],
                         p[1] + sgn * eps * g[1],
                         p[2] + sgn * eps * g[2],
                         wi[0], wi[1], wi[2], T_FAR))


# --- cached heavy renders -------------------------------------------------

def _cached_image(tag, out_dir, allow_compute, force, fn):
    path = os.path.join(out_dir, tag + ".pfm")
    if not force and os.path.exists(path):
        return read_pfm(path).astype(np.float64)
    if not allow_compute:
        raise ConfigError(f"missing cached render {path}; run "
                          "'nirclab precompute-reference' first")
    img = fn()
    os.makedirs(out_dir, exist_ok=True)
    write_pfm(path, img)
    return np.asarray(img, np.float64)


def reference_render(scene, spp, seed=0, out_dir=".refcache",
                     allow_compute=True, force=False):
    """Path-traced reference, cached on disk by scene state and seed."""
    tag = f"ref-{scene.content_hash()}-{spp}-{seed}"
    return _cached_image(
        tag, out_dir, allow_compute, force,
        lambda: render(scene, EstimatorConfig(mode="pt"),
                       seed=seed, spp=spp).image)


def _theta_tag(cache):
    return hashlib.sha1(cache.theta.tobytes()).hexdigest()[:10]


def converged_stop_render(scene, cache, config, spp, seed=0, v1_map=None,
                          out_dir=".refcache", allow_compute=True,
                          force=False):
    """High-spp biased render, cached; the bias-map source for sweeps."""
    vtag = "all" if v1_map is not None else "none"
    tag = (f"stop-{scene.content_hash()}-{config.mode}-{_theta_tag(cache)}"
           f"-{spp}-{seed}-{vtag}")
    return _cached_image(
        tag, out_dir, allow_compute, force,
        lambda: render_biased(scene, cache, config, seed=seed, spp=spp,
                              v1_map=v1_map).image)


def adaptive_termination_analysis(scene, nirc, nrc, eps_list, config=None,
                                  ref_spp=5000, conv_spp=512, ensemble=64,
                                  ensemble_spp=1, seed=0,
                                  out_dir=".refcache", allow_compute=True):
    """Epsilon sweep of bias-gated first-vertex stopping.

    For each cache the converged always-stop render against the
    reference yields a per-pixel relative-bias map; each threshold eps
    then admits first-vertex stops wherever that bias is below eps (an
    empty set at eps form the spread-test-only baseline, an inf
    threshold stops every eligible pixel).  Each admitted map is
    scored from an ensemble of cheap renders.  Returns one row per
    (cache, eps) as a dict.
    """
    if config is None:
        config = EstimatorConfig(mode="biased-nirc-sph")
    ref = reference_render(scene, ref_spp, seed, out_dir, allow_compute)
    h, w = ref.shape[:2]
    ones = np.ones(h * w, np.uint8)
    rows = []
    for kind, cache in (("nirc", nirc), ("nrc", nrc)):
        cfg = replace(config, mode=f"biased-{kind}-sph")
        conv = converged_stop_render(scene, cache, cfg, conv_spp, seed,
                                     v1_map=ones, out_dir=out_dir,
                                     allow_compute=allow_compute)
        rel = (conv - ref) / (ref + 0.01)
        bias_map = np.sqrt(np.mean(rel * rel, axis=2))
        for eps in eps_list:
            v1 = (bias_map < eps).reshape(-1).astype(np.uint8)
            stack = np.zeros((ensemble, h, w, 3))
            plen = 0.0
            for e in range(ensemble):
                out = render_biased(scene, cache, cfg,
                                    seed=seed + 1000 + e,
                                    spp=ensemble_spp, v1_map=v1)
                stack[e] = out.image
                plen += out.avg_path_length / ensemble
            dec = bias_variance_decompose(stack, ref)
            rows.append({
                "kind": kind,
                "eps": float(eps),
                "mrse": mrse(stack.mean(axis=0), ref),
                "rbias2": dec.rbias2,
                "rvar": dec.rvar,
                "avg_path_length": plen,
                "pct_ir": plen - 1.0,
                "v1_fraction": float(np.mean(v1)),
            })
    return rows
