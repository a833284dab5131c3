"""Closed-form control variates and the residual-variance meter.

Two analytic directional models approximate the reflection integrand
f(w) = L_i(w) f_r(w) cos(theta) at a pixel's primary hit, fitted from
streamed brdf samples: a spherical-harmonics projection and a von
Mises-Fisher mixture trained by stepwise EM.  Both expose an exact
sphere integral, which is what makes them usable as control variates
without a second quadrature.  The neural cache plugs into the same
measurement: everything is ranked by the relative variance of the
one-sample residual estimator it leaves behind.

The L_i seen here carries the same MIS weighting as the cache training
targets (emission at a segment end is down-weighted against the light
sampler), so all models fit the estimator the path walk actually uses,
not a hypothetical unweighted one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .caches import _path_arrays
from .core import octa_decode_s
from .errors import ConfigError
from .kernels import integrand_samples_kernel
from .mlp import full_forward
from .sh import MAX_BANDS, sh_eval_batch

_LUM = np.array([0.2126, 0.7152, 0.0722])

KAPPA_MIN = 1e-3
KAPPA_MAX = 1e4
EM_BATCH_MIN = 15
EM_BATCH_MAX = 40
EM_STEP_POWER = 0.7


# ---------------------------------------------------------------------------
# spherical harmonics pixel model


@dataclass
class ShPixelModel:
    """Running spherical-harmonics projection of one pixel's integrand.

    coef holds one RGB row per basis function (bands**2 rows), each the
    running mean of value * Y_lm / pdf over every sample ever folded in.
    Reconstruction is a plain basis expansion and may go negative; the
    control variate does not care.
    """

    bands: int = 5
    coef: np.ndarray = None
    count: int = 0

    def __post_init__(self):
        if not (1 <= int(self.bands) <= MAX_BANDS):
            raise ConfigError(
                f"sh bands must be in [1, {MAX_BANDS}], got {self.bands}")
        if self.coef is None:
            self.coef = np.zeros((int(self.bands) ** 2, 3))


def sh_fit_accumulate(model, dirs, values, pdfs):
    """Fold a batch of integrand samples into the running projection.

    Dead draws (pdf <= 0) stay in the count with zero contribution, the
    same accounting a plain Monte Carlo sum would use.
    """
    dirs = np.atleast_2d(np.asarray(dirs, float))
    values = np.atleast_2d(np.asarray(values, float))
    pdfs = np.atleast_1d(np.asarray(pdfs, float))
    n = dirs.shape[0]
    if n == 0:
        return model
    live = pdfs > 0.0
    safe_dirs = np.where(live[:, None], dirs, [0.0, 0.0, 1.0])
    y = sh_eval_batch(safe_dirs, model.bands)
    winv = np.where(live, 1.0 / np.where(live, pdfs, 1.0), 0.0)
    contrib = np.einsum("nb,n,nc->bc", y, winv, values)
    total = model.count + n
    model.coef = (model.coef * model.count + contrib) / total
    model.count = total
    return model


def sh_eval(model, dirs):
    """Reconstruction sum(c_lm Y_lm) at each direction, (n, 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, float))
    return sh_eval_batch(dirs, model.bands) @ model.coef


def sh_integral(model):
    """Exact sphere integral of the reconstruction, (3,).

    Only the constant band survives integration: every other basis
    function is orthogonal to it, so the integral is 2 sqrt(pi) c_00.
    """
    return 2.0 * math.sqrt(math.pi) * model.coef[0].copy()


# ---------------------------------------------------------------------------
# von Mises-Fisher mixture pixel model


@dataclass
class VmfPixelModel:
    """Mixture of vMF lobes with per-channel masses.

    mu (L, 3) unit directions, kappa (L,) in (0, KAPPA_MAX], w (L, 3)
    nonnegative RGB weights.  The mixture models the integrand itself,
    so its sphere integral is just the weight sum.
    """

    mu: np.ndarray
    kappa: np.ndarray
    w: np.ndarray

    @property
    def n_lobes(self):
        return self.mu.shape[0]


def _vmf_norm_const(kappa):
    # kappa / (2 pi (1 - exp(-2 kappa))), written with expm1 so the
    # kappa -> 0 limit lands on 1 / (4 pi) instead of 0/0
    return kappa / (2.0 * math.pi * (-np.expm1(-2.0 * kappa)))


def vmf_pdf(mu, kappa, dirs):
    """von Mises-Fisher density at each direction, safe for any kappa.

    The exponent is written relative to the peak, exp(kappa (mu.w - 1)),
    so nothing overflows at large concentration.  Nonpositive kappa is a
    modelling error and is clamped to KAPPA_MIN with a warning.
    """
    kappa = float(kappa)
    if kappa <= 0.0:
        warnings.warn(f"vmf kappa {kappa} clamped to {KAPPA_MIN}",
                      stacklevel=2)
        kappa = KAPPA_MIN
    kappa = min(kappa, KAPPA_MAX)
    mu = np.asarray(mu, float)
    dirs = np.atleast_2d(np.asarray(dirs, float))
    dot = dirs @ mu
    return _vmf_norm_const(kappa) * np.exp(kappa * (dot - 1.0))


def _vmf_dens_grid(mu, kappa, dirs):
    """Per-lobe densities with leading batch axes.

    mu (..., L, 3), kappa (..., L), dirs (..., n, 3) -> (..., n, L).
    Assumes kappa already inside [KAPPA_MIN, KAPPA_MAX].
    """
    dot = np.einsum("...nc,...lc->...nl", dirs, mu)
    k = kappa[..., None, :]
    return _vmf_norm_const(k) * np.exp(k * (dot - 1.0))


def vmf_mixture_eval(model, dirs):
    """Mixture value sum_l w_l vmf_l at each direction, (n, 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, float))
    dens = _vmf_dens_grid(model.mu, np.clip(model.kappa, KAPPA_MIN,
                                            KAPPA_MAX), dirs)
    return dens @ model.w


def vmf_integral(model):
    """Exact sphere integral of the mixture, (3,): each lobe is a
    normalized density, so only the weights remain."""
    return model.w.sum(axis=0)


def vmf_init_fibonacci(n_lobes, weight_total=None):
    """Fresh mixture with lobes on a spherical Fibonacci lattice.

    A single lobe points at +z by convention.  Concentrations put the
    half-maximum at half the nearest-neighbour angle, mild overlap
    without washing the lattice out.  weight_total (3,) is split evenly
    across lobes; re-initialising with a model's current per-channel
    mass therefore keeps the mixture integral unchanged.
    """
    n = int(n_lobes)
    if n < 1:
        raise ConfigError(f"need at least one lobe, got {n_lobes}")
    if weight_total is None:
        weight_total = np.ones(3)
    weight_total = np.asarray(weight_total, float)
    if n == 1:
        mu = np.array([[0.0, 0.0, 1.0]])
        half_angle = 0.5 * math.pi
    else:
        i = np.arange(n)
        z = 1.0 - (2.0 * i + 1.0) / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        golden = (1.0 + math.sqrt(5.0)) / 2.0
        phi = 2.0 * math.pi * i / golden
        mu = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        dots = np.clip(mu @ mu.T, -1.0, 1.0)
        np.fill_diagonal(dots, -1.0)
        half_angle = 0.5 * math.acos(dots.max())
    kappa_val = math.log(2.0) / (1.0 - math.cos(half_angle))
    kappa = np.full(n, min(max(kappa_val, KAPPA_MIN), KAPPA_MAX))
    w = np.tile(weight_total / n, (n, 1))
    return VmfPixelModel(mu=mu, kappa=kappa, w=w)


def _mean_resultant(kappa):
    """A(kappa) = coth(kappa) - 1/kappa, the lobe's mean resultant length."""
    k = np.asarray(kappa, float)
    small = k < 1e-4
    ks = np.where(small, 1.0, k)
    a = 1.0 / np.tanh(ks) - 1.0 / ks
    return np.where(small, k / 3.0, a)


@dataclass
class StepwiseEmState:
    """Sufficient statistics blended across batches with a decaying step.

    Statistics are seeded from the model itself so that a data-free
    update only decays the mass and leaves shapes alone.  loglik keeps
    the per-batch weighted data log-likelihood, measured before that
    batch's update is applied (nan for batches with no mass).
    """

    t: int = 0
    s0: np.ndarray = None
    s1: np.ndarray = None
    s0c: np.ndarray = None
    loglik: list = field(default_factory=list)

    @classmethod
    def from_model(cls, model):
        pi = model.w @ _LUM
        s1 = model.mu * (pi * _mean_resultant(model.kappa))[:, None]
        return cls(t=0, s0=pi.copy(), s1=s1, s0c=model.w.copy(), loglik=[])


def _em_core(mu, kappa, w, s0, s1, s0c, t, dirs, values, winv):
    """One stepwise EM update over a leading pixel axis, in place.

    mu (P, L, 3), kappa (P, L), w (P, L, 3); dirs/values (P, K, 3),
    winv (P, K) holds 1/pdf with dead draws zeroed.  Returns the
    pre-update weighted log-likelihood per pixel (nan where the batch
    carried no mass).
    """
    p_, k_, _ = dirs.shape
    u = (values @ _LUM) * winv
    wc = values * winv[..., None]

    pi = np.einsum("plc,c->pl", w, _LUM)
    pi_sum = pi.sum(axis=1, keepdims=True)
    l = mu.shape[1]
    pi_hat = np.where(pi_sum > 0.0, pi / np.where(pi_sum > 0.0, pi_sum, 1.0),
                      1.0 / l)
    dens = _vmf_dens_grid(mu, np.clip(kappa, KAPPA_MIN, KAPPA_MAX), dirs)

    mix = np.einsum("pnl,pl->pn", dens, pi_hat)
    u_tot = u.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.einsum("pn,pn->p", u, np.log(np.maximum(mix, 1e-300)))
        ll = np.where(u_tot > 0.0, ll / np.where(u_tot > 0.0, u_tot, 1.0),
                      np.nan)

    num = dens * pi_hat[:, None, :]
    den = num.sum(axis=2, keepdims=True)
    resp = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 1.0 / l)

    ru = resp * u[..., None]
    s0_hat = ru.mean(axis=1)
    s1_hat = np.einsum("pnl,pnc->plc", ru, dirs) / k_
    s0c_hat = np.einsum("pnl,pnc->plc", resp, wc) / k_

    eta = (t + 2.0) ** (-EM_STEP_POWER)
    s0 *= 1.0 - eta
    s0 += eta * s0_hat
    s1 *= 1.0 - eta
    s1 += eta * s1_hat
    s0c *= 1.0 - eta
    s0c += eta * s0c_hat

    np.maximum(s0c, 0.0, out=w)
    norm1 = np.sqrt(np.einsum("plc,plc->pl", s1, s1))
    ok = (norm1 > 1e-12) & (s0 > 1e-12)
    safe_n = np.where(ok, norm1, 1.0)
    mu_new = s1 / safe_n[..., None]
    mu[ok] = mu_new[ok]
    rbar = np.clip(norm1 / np.where(ok, s0, 1.0), 0.0, 0.9999)
    kap = rbar * (3.0 - rbar * rbar) / (1.0 - rbar * rbar)
    kappa[ok] = np.clip(kap, KAPPA_MIN, KAPPA_MAX)[ok]
    return ll


def vmf_stepwise_em_update(model, state, dirs, values, pdfs):
    """Stepwise EM on one batch of integrand samples.

    Responsibilities use luminance masses; the RGB weights come from
    per-channel statistics, so color and shape are fitted together.
    Batch size is contractual: outside [EM_BATCH_MIN, EM_BATCH_MAX] the
    blending schedule loses its meaning and the call is rejected.
    """
    if state.s0 is None:
        raise ConfigError("EM state has no statistics; build it with "
                          "StepwiseEmState.from_model")
    dirs = np.atleast_2d(np.asarray(dirs, float))
    values = np.atleast_2d(np.asarray(values, float))
    pdfs = np.atleast_1d(np.asarray(pdfs, float))
    n = dirs.shape[0]
    if not (EM_BATCH_MIN <= n <= EM_BATCH_MAX):
        raise ConfigError(
            f"em batch size {n} outside [{EM_BATCH_MIN}, {EM_BATCH_MAX}]")
    winv = np.where(pdfs > 0.0, 1.0 / np.where(pdfs > 0.0, pdfs, 1.0), 0.0)
    ll = _em_core(model.mu[None], model.kappa[None], model.w[None],
                  state.s0[None], state.s1[None], state.s0c[None],
                  state.t, dirs[None], values[None], winv[None])
    state.loglik.append(float(ll[0]))
    state.t += 1
    return model


# ---------------------------------------------------------------------------
# residual variance


@dataclass(frozen=True)
class ResidualVariance:
    """Outcome of one residual-variance measurement.

    v_rel is variance over squared mean luminance; when the mean is
    (numerically) zero the variance is reported as-is and zero_mean is
    set, so callers never divide by nothing silently.
    """

    v_rel: float
    variance: float
    mean_lum: float
    zero_mean: bool


def measure_residual_variance(f, pdf, g=None, alpha=0.95, chunk=16):
    """Relative variance of the one-sample control-variate residual.

    f (n, 3) integrand samples, pdf (n,) their densities, g (n, 3) the
    model evaluated at the same directions (None for plain Monte
    Carlo).  The stream is folded chunk by chunk into exponential
    moving averages (keep factor alpha) of the residual variance and
    the plain estimate's mean, mirroring how a renderer would meter a
    live estimator.  Dead draws count as zero, as in the plain sum.
    """
    f = np.atleast_2d(np.asarray(f, float))
    pdf = np.atleast_1d(np.asarray(pdf, float))
    n = f.shape[0]
    if n < 2:
        raise ConfigError("residual variance needs at least two samples")
    if g is None:
        g = np.zeros_like(f)
    else:
        g = np.atleast_2d(np.asarray(g, float))
    winv = np.where(pdf > 0.0, 1.0 / np.where(pdf > 0.0, pdf, 1.0), 0.0)
    est = (f @ _LUM) * winv
    res = ((f - g) @ _LUM) * winv
    var_ema = mean_ema = None
    for lo in range(0, n, chunk):
        rc = res[lo:lo + chunk]
        ec = est[lo:lo + chunk]
        if rc.shape[0] < 2:
            break
        v = float(np.var(rc, ddof=1))
        m = float(np.mean(ec))
        if var_ema is None:
            var_ema, mean_ema = v, m
        else:
            var_ema = alpha * var_ema + (1.0 - alpha) * v
            mean_ema = alpha * mean_ema + (1.0 - alpha) * m
    zero = abs(mean_ema) < 1e-12
    v_rel = var_ema if zero else var_ema / (mean_ema * mean_ema)
    return ResidualVariance(v_rel=v_rel, variance=var_ema,
                            mean_lum=mean_ema, zero_mean=zero)


# ---------------------------------------------------------------------------
# whole-image fitting and measurement


@dataclass
class BaselineReport:
    """Per-pixel fit and residual-variance maps for a whole frame.

    v_rel maps are flat (h*w,) arrays with nan at invalid pixels
    (center ray missed, hit a mirror, or the metered mean was zero).
    Methods always include "none" (plain path tracing) plus "sh" and
    "vmf"; "nirc" appears when a cache was supplied.
    """

    width: int
    height: int
    valid: np.ndarray
    v_rel: dict
    mean_lum: np.ndarray
    zero_mean: np.ndarray
    sh_coef: np.ndarray
    vmf_mu: np.ndarray
    vmf_kappa: np.ndarray
    vmf_w: np.ndarray
    surf_pos: np.ndarray
    surf_ns: np.ndarray
    surf_alb: np.ndarray
    surf_rough: np.ndarray

    def v_rel_mean(self, method):
        m = self.v_rel[method]
        good = self.valid & np.isfinite(m)
        if not good.any():
            return math.nan
        return float(m[good].mean())

    def image(self, method):
        return self.v_rel[method].reshape(self.height, self.width)


def _integrand_round(scene, seed, frame, per_round, scratch, out):
    integrand_samples_kernel(
        scene.pack, scene.camera, np.uint64(seed), np.uint64(frame),
        per_round, *scratch,
        out["dir"], out["f"], out["frc"], out["pdf"], out["valid"],
        out["spos"], out["sns"], out["salb"], out["srough"])


def _nirc_grid_eval(cache, out, live):
    """Cache predictions times brdf*cos at every live draw, (P, K, 3)."""
    p_, k_, _ = out["dir"].shape
    idx = np.nonzero(live.ravel())[0]
    g = np.zeros((p_ * k_, 3))
    if idx.size:
        pix = idx // k_
        pred = full_forward(
            cache.spec, cache.theta, out["spos"][pix], out["sns"][pix],
            out["salb"][pix], out["srough"][pix],
            out["dir"].reshape(-1, 3)[idx])
        g[idx] = np.asarray(pred, float)
    return g.reshape(p_, k_, 3) * out["frc"]


def residual_variance_report(scene, nirc=None, bands=5, n_lobes=11,
                             rounds=200, per_round=16, measure_rounds=64,
                             seed=0, alpha=0.95):
    """Fit per-pixel analytic models and meter every control variate.

    Phase one streams `rounds` batches of `per_round` brdf samples per
    pixel into the spherical-harmonics projection and the stepwise-EM
    mixture.  Phase two draws `measure_rounds` fresh batches and treats
    each as one chunk of the residual-variance EMA, for the fitted
    models, for the cache (if given) and for plain path tracing.
    """
    if not (EM_BATCH_MIN <= per_round <= EM_BATCH_MAX):
        raise ConfigError(
            f"per_round {per_round} outside "
            f"[{EM_BATCH_MIN}, {EM_BATCH_MAX}]")
    w = int(scene.camera[14])
    h = int(scene.camera[15])
    p_ = w * h
    k_ = int(per_round)
    out = dict(
        dir=np.zeros((p_, k_, 3)), f=np.zeros((p_, k_, 3)),
        frc=np.zeros((p_, k_, 3)), pdf=np.zeros((p_, k_)),
        valid=np.zeros(p_, np.uint8), spos=np.zeros((p_, 3)),
        sns=np.zeros((p_, 3)), salb=np.zeros((p_, 3)),
        srough=np.zeros(p_))
    scratch = [a[0] for a in _path_arrays(1).values()]

    proto = vmf_init_fibonacci(n_lobes)
    mu = np.tile(proto.mu, (p_, 1, 1))
    kappa = np.tile(proto.kappa, (p_, 1))
    wmix = np.tile(proto.w, (p_, 1, 1))
    pi0 = wmix @ _LUM
    s0 = pi0.copy()
    s1 = mu * (pi0 * _mean_resultant(kappa))[..., None]
    s0c = wmix.copy()

    csum = np.zeros((p_, bands * bands, 3))
    unit_z = np.array([0.0, 0.0, 1.0])

    for t in range(rounds):
        _integrand_round(scene, seed, t, k_, scratch, out)
        live = out["pdf"] > 0.0
        winv = np.where(live, 1.0 / np.where(live, out["pdf"], 1.0), 0.0)
        safe = np.where(live[..., None], out["dir"], unit_z)
        y = sh_eval_batch(safe.reshape(-1, 3), bands).reshape(p_, k_, -1)
        csum += np.einsum("pkb,pk,pkc->pbc", y, winv, out["f"])
        _em_core(mu, kappa, wmix, s0, s1, s0c, t, out["dir"], out["f"],
                 winv)
    coef = csum / max(1, rounds * k_)

    methods = ["none", "sh", "vmf"] + (["nirc"] if nirc is not None else [])
    var_ema = {m: None for m in methods}
    mean_ema = None
    pix_valid = None
    for j in range(measure_rounds):
        _integrand_round(scene, seed, rounds + j, k_, scratch, out)
        if pix_valid is None:
            pix_valid = out["valid"].astype(bool).copy()
        live = out["pdf"] > 0.0
        winv = np.where(live, 1.0 / np.where(live, out["pdf"], 1.0), 0.0)
        flum = out["f"] @ _LUM
        est = flum * winv
        m_round = est.mean(axis=1)
        mean_ema = m_round if mean_ema is None \
            else alpha * mean_ema + (1.0 - alpha) * m_round
        safe = np.where(live[..., None], out["dir"], unit_z)
        for m in methods:
            if m == "none":
                g_lum = np.zeros_like(flum)
            elif m == "sh":
                y = sh_eval_batch(safe.reshape(-1, 3),
                                  bands).reshape(p_, k_, -1)
                g_lum = np.einsum("pkb,pbc,c->pk", y, coef, _LUM)
            elif m == "vmf":
                dens = _vmf_dens_grid(
                    mu, np.clip(kappa, KAPPA_MIN, KAPPA_MAX), safe)
                g_lum = np.einsum("pkl,plc,c->pk", dens, wmix, _LUM)
            else:
                g_lum = _nirc_grid_eval(nirc, out, live) @ _LUM
            r = (flum - g_lum) * winv
            v_round = r.var(axis=1, ddof=1)
            var_ema[m] = v_round.copy() if var_ema[m] is None \
                else alpha * var_ema[m] + (1.0 - alpha) * v_round

    zero_mean = np.abs(mean_ema) < 1e-12
    denom = np.where(zero_mean, 1.0, mean_ema * mean_ema)
    v_rel = {}
    for m in methods:
        vr = np.where(zero_mean, var_ema[m], var_ema[m] / denom)
        vr = np.where(pix_valid, vr, np.nan)
        v_rel[m] = vr
    return BaselineReport(
        width=w, height=h, valid=pix_valid, v_rel=v_rel,
        mean_lum=np.where(pix_valid, mean_ema, np.nan),
        zero_mean=zero_mean & pix_valid,
        sh_coef=coef, vmf_mu=mu, vmf_kappa=kappa, vmf_w=wmix,
        surf_pos=out["spos"].copy(), surf_ns=out["sns"].copy(),
        surf_alb=out["salb"].copy(), surf_rough=out["srough"].copy())


def octa_grid_dirs(res):
    """Directions at octahedral texel centres, (res*res, 3).

    Row-major with v as the row index, so reshaping to (res, res, 3)
    gives an image whose center texel looks along +z.
    """
    u = (np.arange(int(res)) + 0.5) / int(res)
    return np.array([octa_decode_s(float(x), float(y))
                     for y in u for x in u])


def reconstruction_map(evaluate, res=64):
    """Octahedral image of a directional function, (res, res, 3).

    evaluate takes (n, 3) directions and returns (n, 3) values; any of
    the fitted models or a cache query slots in directly.
    """
    dirs = octa_grid_dirs(res)
    vals = np.asarray(evaluate(dirs), float)
    return vals.reshape(int(res), int(res), 3)
