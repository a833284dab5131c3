"""Estimator modes: exact oracles, termination math, and mean checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nirclab.backend import USE_JIT
from nirclab.caches import Cache
from nirclab.errors import ConfigError
from nirclab.estimators import (EstimatorConfig, PathState,
                                bth_continuation_probability, estimate_Lc,
                                estimate_Lr, pt_radiance, render,
                                render_biased, render_two_level,
                                sph_should_terminate, sph_update)
from nirclab.lights import nee_pdf_for_hit_s
from nirclab.scene import load_builtin, load_scene

heavy = pytest.mark.skipif(not USE_JIT, reason="statistical checks need "
                           "the compiled kernels to finish in time")

EMPTY = """
camera { position 0 0 0  look_at 0 0 1  up 0 1 0  fov 60  resolution 8 8 }
environment { kind constant  color 2.0 2.0 2.0 }
"""

# big half-albedo floor under a unit sky: every pixel is exactly 0.5
PLANE = """
camera { position 0 40 0.001  look_at 0 0 0  up 0 1 0  fov 30
         resolution 8 8 }
material half { kind lambert  albedo 0.5 0.5 0.5 }
quad ground { material half  p0 -500 0 -500  p1 500 0 -500
              p2 500 0 500  p3 -500 0 500 }
environment { kind constant  color 1.0 1.0 1.0 }
"""

BOX = """
camera { position 0.5 0.5 -1.4  look_at 0.5 0.5 0.5  up 0 1 0
         fov 39  resolution 16 16 }
material w { kind lambert  albedo 0.7 0.7 0.7 }
material l { kind lambert  albedo 0 0 0  emit 10 10 10 }
quad floor   { material w  p0 0 0 0  p1 1 0 0  p2 1 0 1  p3 0 0 1 }
quad ceiling { material w  p0 0 1 0  p1 0 1 1  p2 1 1 1  p3 1 1 0 }
quad back    { material w  p0 0 0 1  p1 1 0 1  p2 1 1 1  p3 0 1 1 }
quad left    { material w  p0 0 0 0  p1 0 0 1  p2 0 1 1  p3 0 1 0 }
quad right   { material w  p0 1 0 0  p1 1 1 0  p2 1 1 1  p3 1 0 1 }
quad lamp    { material l  p0 0.35 0.999 0.35  p1 0.65 0.999 0.35
               p2 0.65 0.999 0.65  p3 0.35 0.999 0.65 }
"""

# lamp over an absorbing floor: nothing survives one bounce
DARK = """
camera { position 0.5 0.5 -1.4  look_at 0.5 0.5 0.5  up 0 1 0
         fov 39  resolution 12 12 }
material k { kind lambert  albedo 0 0 0 }
material l { kind lambert  albedo 0 0 0  emit 6 5 4 }
quad floor { material k  p0 0 0 0  p1 1 0 0  p2 1 0 1  p3 0 0 1 }
quad back  { material k  p0 0 0 1  p1 1 0 1  p2 1 1 1  p3 0 1 1 }
quad lamp  { material l  p0 0.3 0.999 0.3  p1 0.7 0.999 0.3
             p2 0.7 0.999 0.7  p3 0.3 0.999 0.7 }
"""

TWO_PLANES = """
camera { position 0 0.5 -3  look_at 0 0.5 0  up 0 1 0  fov 40
         resolution 8 8 }
material dull { kind lambert  albedo 0.35 0.35 0.35 }
material glow { kind lambert  albedo 0 0 0  emit 4 3 2 }
quad floor { material dull  p0 -500 0 -500  p1 500 0 -500
             p2 500 0 500  p3 -500 0 500 }
quad sky   { material glow  p0 -500 1 -500  p1 -500 1 500
             p2 500 1 500  p3 500 1 -500 }
"""


def floor_point(scene, x=0.2, z=0.1):
    it = scene.intersect(np.array([x, 5.0, z]), np.array([0.0, -1.0, 0.0]))
    assert it is not None
    return it


class ConstCache:
    """Duck-typed stand-in predicting one fixed rgb everywhere."""

    def __init__(self, value):
        self.value = np.asarray(value, float)

    def nirc_query(self, surface, dirs):
        dirs = np.atleast_2d(dirs)
        return np.tile(self.value, (dirs.shape[0], 1))


class MisEmitterCache:
    """Exact incident radiance toward the glow plane of TWO_PLANES,
    including the MIS weight the recording walk applies on arrival."""

    def __init__(self, scene, prev_pdf_of):
        self.scene = scene
        self.prev_pdf_of = prev_pdf_of

    def nirc_query(self, surface, dirs):
        dirs = np.atleast_2d(dirs)
        out = np.zeros((dirs.shape[0], 3))
        pk = self.scene.pack
        for i, d in enumerate(dirs):
            hit = self.scene.intersect(surface.position
                                       + pk.eps * surface.ng, d)
            if hit is None:
                continue
            emit = pk.mat_emit[hit.mat]
            if not np.any(emit > 0.0):
                continue
            pn = nee_pdf_for_hit_s(pk, hit.prim_kind, hit.prim,
                                   hit.t, d[0], d[1], d[2],
                                   hit.ng[0], hit.ng[1], hit.ng[2])
            p = self.prev_pdf_of(d)
            out[i] = (p / (p + pn)) * emit
        return out


# --- exact radiance values ------------------------------------------------

def test_empty_scene_is_exactly_the_environment():
    sc = load_scene(EMPTY)
    out = render(sc, EstimatorConfig(mode="pt"), seed=0, spp=3)
    assert np.all(out.image == 2.0)
    assert out.avg_path_length == 0.0
    assert out.pct_ir_bounces == -1.0


def test_half_albedo_floor_reflects_half_the_sky():
    sc = load_scene(PLANE)
    out = render(sc, EstimatorConfig(mode="pt"), seed=2, spp=16)
    assert np.max(np.abs(out.image - 0.5)) < 5e-3


@heavy
def test_furnace_sphere_reaches_equilibrium():
    sc = load_builtin("furnace")
    out = render(sc, EstimatorConfig(mode="pt"), seed=1, spp=256)
    assert abs(float(out.image.mean()) - 1.0) < 0.01
    # unit albedo + constant sky leave no residual noise at all
    assert np.max(np.abs(out.image - 1.0)) < 0.01


def test_pt_radiance_matches_the_image_kernel():
    sc = load_scene(BOX)
    out = render(sc, EstimatorConfig(mode="pt"), seed=11, spp=1)
    for ix, iy in ((0, 0), (7, 3), (15, 15)):
        rgb = pt_radiance(sc, ix, iy, seed=11)
        assert np.array_equal(rgb, out.image[iy, ix])


# --- two-level estimator --------------------------------------------------

def test_zero_cache_two_level_is_bit_identical_to_pt():
    sc = load_scene(BOX)
    cache = Cache.create("nirc", sc, seed=3)
    assert cache.is_zero
    pt = render(sc, EstimatorConfig(mode="pt"), seed=5, spp=2)
    forced = render_two_level(sc, cache, seed=5, spp=2, force_cache=True)
    short = render_two_level(sc, cache, seed=5, spp=2)
    assert np.array_equal(pt.image, forced.image)
    assert np.array_equal(pt.image, short.image)
    assert np.array_equal(pt.path_length, forced.path_length)


@heavy
def test_two_level_random_cache_keeps_the_mean():
    sc = load_scene(BOX)
    cache = Cache.create("nirc", sc, seed=9, init="random")
    assert not cache.is_zero
    ref = render(sc, EstimatorConfig(mode="pt"), seed=1, spp=3000).image
    n = 96
    stack = np.zeros((n,) + ref.shape)
    for e in range(n):
        stack[e] = render_two_level(sc, cache, seed=100 + e, spp=1).image
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / math.sqrt(n)
    lum = ref.mean(axis=2)
    ok = lum > np.percentile(lum, 20)
    z = np.abs(mean - ref) / np.maximum(se, 1e-9)
    frac = np.mean(z[ok] < 3.5)
    assert frac > 0.95, f"only {frac:.3f} of pixels within 3.5 SE"
    # an overshooting cache must drive some samples negative and the
    # estimator has to keep them to stay unbiased
    assert np.min(stack) < 0.0


@heavy
def test_two_level_trained_cache_stays_unbiased_and_calms_pixels():
    sc = load_scene(BOX)
    cache = Cache.create("nirc", sc, seed=4)
    for f in range(64):
        cache.train_frame(cache.collect(count=192))
    ref = render(sc, EstimatorConfig(mode="pt"), seed=1, spp=3000).image
    n = 64
    tl = np.zeros((n,) + ref.shape)
    pt = np.zeros((n,) + ref.shape)
    for e in range(n):
        tl[e] = render_two_level(sc, cache, seed=500 + e, spp=1).image
        pt[e] = render(sc, EstimatorConfig(mode="pt"),
                       seed=500 + e, spp=1).image
    se = tl.std(axis=0, ddof=1) / math.sqrt(n)
    z = np.abs(tl.mean(axis=0) - ref) / np.maximum(se, 1e-9)
    lum = ref.mean(axis=2)
    ok = lum > np.percentile(lum, 20)
    assert np.mean(z[ok] < 3.5) > 0.95
    vr = tl.var(axis=0, ddof=1).mean(axis=2)[ok] \
        / np.maximum(pt.var(axis=0, ddof=1).mean(axis=2)[ok], 1e-12)
    assert np.median(vr) < 1.0


# --- per-vertex ops -------------------------------------------------------

def test_estimate_Lc_constant_cache_on_lambert_is_albedo_times_value():
    sc = load_scene(BOX)
    it = floor_point(sc)
    got = estimate_Lc(sc, it, ConstCache((2.0, 1.0, 0.5)), n_c=64, seed=3)
    # cosine-matched sampling makes every term exactly albedo * value
    want = 0.7 * np.array([2.0, 1.0, 0.5])
    assert np.allclose(got, want, rtol=1e-12)


def test_estimate_Lc_zero_cache_is_zero_and_single_sample_agrees():
    sc = load_scene(BOX)
    it = floor_point(sc)
    assert np.all(estimate_Lc(sc, it, ConstCache(0.0), n_c=8, seed=1) == 0.0)
    one = estimate_Lc(sc, it, ConstCache((1.0, 1.0, 1.0)), n_c=1, seed=7)
    assert np.allclose(one, 0.7, rtol=1e-12)


def test_estimate_Lr_perfect_cache_has_zero_mean_and_zero_variance():
    sc = load_scene(TWO_PLANES)
    it = floor_point(sc, x=0.3, z=-0.2)
    from nirclab.bsdf import bsdf_pdf
    cache = MisEmitterCache(sc, lambda d: bsdf_pdf(sc, it, d))
    vals = np.array([estimate_Lr(sc, it, cache, n_r=4, seed=2, stream=s)
                     for s in range(24)])
    assert np.all(vals == 0.0)


@heavy
def test_cache_plus_residual_matches_plain_indirect():
    sc = load_scene(BOX)
    it = floor_point(sc, x=0.6, z=0.4)
    zero = ConstCache(0.0)
    rnd = ConstCache((0.31, 0.22, 0.4))
    n = 1200
    plain = np.zeros((n, 3))
    split = np.zeros((n, 3))
    for s in range(n):
        plain[s] = estimate_Lr(sc, it, zero, n_r=1, seed=31, stream=s)
        split[s] = estimate_Lc(sc, it, rnd, n_c=4, seed=31, stream=s) \
            + estimate_Lr(sc, it, rnd, n_r=1, seed=31, stream=s)
    d = plain.mean(axis=0) - split.mean(axis=0)
    se = np.sqrt(plain.var(axis=0, ddof=1) / n + split.var(axis=0, ddof=1) / n)
    assert np.all(np.abs(d) < 3.5 * np.maximum(se, 1e-12))


def test_ops_reject_delta_surfaces_and_bad_counts():
    sc = load_scene(BOX.replace("kind lambert  albedo 0.7 0.7 0.7",
                                "kind mirror  albedo 0.9 0.9 0.9"))
    it = floor_point(sc)
    with pytest.raises(ConfigError):
        estimate_Lc(sc, it, ConstCache(1.0), n_c=4)
    with pytest.raises(ConfigError):
        estimate_Lr(sc, it, ConstCache(1.0), n_r=1)
    sc2 = load_scene(BOX)
    with pytest.raises(ConfigError):
        estimate_Lc(sc2, floor_point(sc2), ConstCache(1.0), n_c=0)


# --- termination heuristics ----------------------------------------------

def test_spread_reference_value():
    s = sph_update(PathState(), seg_len=1.0, pdf=-1.0, cos_arrival=1.0)
    assert s.a0 == pytest.approx(1.0 / (4.0 * math.pi))
    assert s.a0 == pytest.approx(0.07958, abs=1e-5)
    assert not sph_should_terminate(s)


def test_spread_one_unit_bounce_terminates():
    s = sph_update(PathState(), seg_len=1.0, pdf=-1.0, cos_arrival=1.0)
    s = sph_update(s, seg_len=1.0, pdf=1.0, cos_arrival=1.0)
    assert s.a == 1.0
    assert sph_should_terminate(s)


def test_spread_first_decision_is_scale_invariant():
    for scale in (0.1, 10.0, 1234.5):
        a = sph_update(PathState(), 1.7, -1.0, 0.8)
        a = sph_update(a, 0.6, 0.9, 0.5)
        b = sph_update(PathState(), 1.7 * scale, -1.0, 0.8)
        b = sph_update(b, 0.6 * scale, 0.9, 0.5)
        assert b.a0 == pytest.approx(a.a0 * scale * scale)
        assert b.a == pytest.approx(a.a * scale * scale)
        assert sph_should_terminate(a) == sph_should_terminate(b)


def test_spread_delta_segment_and_grazing_arrival():
    s = sph_update(PathState(), 1.0, -1.0, 1.0)
    s = sph_update(s, 2.0, -1.0, 0.9)  # delta bounce: spread untouched
    assert s.a == 1.0
    g = sph_update(s, 1.0, 0.5, 0.0)
    assert math.isinf(g.a) and sph_should_terminate(g)


@given(st.lists(st.tuples(st.floats(1.0, 40.0), st.floats(0.05, 50.0),
                          st.floats(0.05, 1.0)), min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_spread_never_decreases(factors):
    # each segment is built with len >= pdf * cos, the regime where the
    # per-segment factor is >= 1 and the spread can only grow
    s = sph_update(PathState(), 1.0, -1.0, 1.0)
    prev = s.a
    vertex = 1
    for base, pdf, c in factors:
        s = sph_update(s, base * pdf * c, pdf, c)
        vertex += 1
        assert s.a >= prev
        assert s.vertex == vertex
        prev = s.a


def test_brdf_test_reference_points():
    assert bth_continuation_probability(5.0 / math.pi, 5) == \
        pytest.approx(0.5)
    assert bth_continuation_probability(0.0, 5) == 0.0
    assert bth_continuation_probability(1e9, 5) > 0.999999


@given(st.floats(0.0, 1e12), st.integers(1, 28))
@settings(max_examples=120, deadline=None)
def test_brdf_test_bounds_and_monotonicity(pdf, n):
    p = bth_continuation_probability(pdf, n)
    assert 0.0 <= p < 1.0
    assert bth_continuation_probability(pdf + 1.0, n) >= p
    if n > 1:
        assert bth_continuation_probability(pdf, n - 1) >= p


def test_brdf_test_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        bth_continuation_probability(-1.0, 5)
    with pytest.raises(ConfigError):
        bth_continuation_probability(math.inf, 5)
    with pytest.raises(ConfigError):
        bth_continuation_probability(1.0, 0)


# --- biased renders -------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        EstimatorConfig(mode="fancy")
    with pytest.raises(ConfigError):
        EstimatorConfig(nc=(15, 5))
    with pytest.raises(ConfigError):
        EstimatorConfig(nc=(40, 5, 5))
    with pytest.raises(ConfigError):
        EstimatorConfig(nbias=0)
    with pytest.raises(ConfigError):
        EstimatorConfig(nr=2)
    with pytest.raises(ConfigError):
        render_biased(load_scene(EMPTY), None, EstimatorConfig(mode="pt"))


def test_dark_scene_brdf_stop_equals_forced_first_vertex_stop():
    sc = load_scene(DARK)
    cache = Cache.create("nirc", sc, seed=0)
    bth = render_biased(sc, cache, EstimatorConfig(mode="biased-nirc-bth",
                                                   nbias=28), seed=3, spp=2)
    ones = np.ones(12 * 12, np.uint8)
    sph = render_biased(sc, cache,
                        EstimatorConfig(mode="biased-nirc-sph", nbias=28),
                        seed=3, spp=2, v1_map=ones)
    # continuations bounce off absorbing surfaces, so both reduce to
    # emission plus one next-event sample at the first vertex
    assert np.array_equal(bth.image, sph.image)


@heavy
def test_brdf_stop_paths_are_shorter_than_spread_stop_paths():
    sc = load_builtin("cornell")
    cache = Cache.create("nirc", sc, seed=0)
    bth = render_biased(sc, cache, EstimatorConfig(mode="biased-nirc-bth"),
                        seed=5, spp=4)
    sph = render_biased(sc, cache,
                        EstimatorConfig(mode="biased-nirc-sph"),
                        seed=5, spp=4)
    assert bth.avg_path_length < sph.avg_path_length


def test_v1_map_zero_is_plain_spread_render():
    sc = load_scene(BOX)
    cache = Cache.create("nirc", sc, seed=0)
    cfg = EstimatorConfig(mode="biased-nirc-sph")
    a = render_biased(sc, cache, cfg, seed=2, spp=2)
    b = render_biased(sc, cache, cfg, seed=2, spp=2,
                      v1_map=np.zeros(16 * 16, np.uint8))
    assert np.array_equal(a.image, b.image)
    ones = np.ones(16 * 16, np.uint8)
    c = render_biased(sc, cache, cfg, seed=2, spp=2, v1_map=ones)
    assert c.avg_path_length < a.avg_path_length
