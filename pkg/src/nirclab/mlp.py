"""Tiny fully connected networks over a flat parameter vector.

The whole model (hash-grid tables + all layer weights and biases) lives
in one flat array so the optimizer and the snapshot code can treat it
uniformly. NetSpec is a namedtuple of plain ints and small arrays, which
keeps it usable from jitted kernels.

Batch forward/backward run in numpy (BLAS) and follow the parameter
dtype, so tests can run a float64 shadow of the float32 production
nets. The scalar query path is jitted for use inside render kernels.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

from .backend import jit_kernel
from .encoding import AUX_DIM, encode_batch, level_resolutions, scatter_grid_grad
from .errors import DivergenceError

ACT_RELU = 0
ACT_SIGMOID = 1

NetSpec = namedtuple(
    "NetSpec",
    [
        "levels", "table", "feats", "res", "bb_min", "bb_inv", "bands",
        "in_dim", "nl", "w_off", "b_off", "dims", "out_act",
        "grid_len", "theta_len",
    ],
)


def make_spec(levels=12, table=2 ** 15, feats=2, base_res=4, max_res=256,
              bands=4, depth=4, width=64, out_dim=3, out_act=ACT_RELU,
              bb_min=None, bb_ext=None):
    if bb_min is None:
        bb_min = np.zeros(3)
    if bb_ext is None:
        bb_ext = np.ones(3)
    in_dim = levels * feats + bands * bands + AUX_DIM
    dims = [in_dim] + [width] * depth + [out_dim]
    grid_len = levels * table * feats
    w_off = []
    b_off = []
    off = grid_len
    for l in range(len(dims) - 1):
        w_off.append(off)
        off += dims[l] * dims[l + 1]
        b_off.append(off)
        off += dims[l + 1]
    return NetSpec(
        levels=levels, table=table, feats=feats,
        res=level_resolutions(levels, base_res, max_res),
        bb_min=np.asarray(bb_min, float), bb_inv=1.0 / np.asarray(bb_ext, float),
        bands=bands, in_dim=in_dim, nl=len(dims) - 1,
        w_off=np.array(w_off, np.int64), b_off=np.array(b_off, np.int64),
        dims=np.array(dims, np.int64), out_act=out_act,
        grid_len=grid_len, theta_len=off,
    )


def init_theta(spec, seed=0, dtype=np.float32, out_scale=0.0):
    """He-normal hidden layers, zero biases, small uniform grid features.

    The final layer is zeroed by default so an untrained rectified net
    predicts exactly 0; out_scale > 0 gives it gaussian weights instead
    (the deliberately wrong 'random' cache state).
    """
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.theta_len, dtype)
    theta[: spec.grid_len] = rng.uniform(-1e-4, 1e-4, spec.grid_len)
    for l in range(spec.nl):
        din = int(spec.dims[l])
        dout = int(spec.dims[l + 1])
        w = spec.w_off[l]
        if l == spec.nl - 1:
            if out_scale > 0.0:
                theta[w : w + din * dout] = rng.normal(0.0, out_scale, din * dout)
        else:
            theta[w : w + din * dout] = rng.normal(
                0.0, np.sqrt(2.0 / din), din * dout)
    return theta


def weight_view(spec, theta, l):
    # weights are stored output-major, one contiguous input row per
    # neuron, so the scalar forward streams theta linearly
    w = spec.w_off[l]
    din = int(spec.dims[l])
    dout = int(spec.dims[l + 1])
    return theta[w : w + din * dout].reshape(dout, din)


def bias_view(spec, theta, l):
    b = spec.b_off[l]
    return theta[b : b + int(spec.dims[l + 1])]


def mlp_forward(spec, theta, X, training=False):
    """Batch forward. Returns Y, or (Y, cache) in training mode."""
    if not np.all(np.isfinite(theta)):
        raise DivergenceError("non-finite network parameter")
    a = X
    zs = []
    acts = [X]
    for l in range(spec.nl):
        z = a @ weight_view(spec, theta, l).T + bias_view(spec, theta, l)
        if l < spec.nl - 1:
            a = np.maximum(z, 0.0)
        elif spec.out_act == ACT_RELU:
            a = np.maximum(z, 0.0)
        else:
            a = 1.0 / (1.0 + np.exp(-z))
        zs.append(z)
        if l < spec.nl - 1:
            acts.append(a)
    if training:
        return a, (acts, zs)
    return a


def mlp_backward(spec, theta, cache, dY, entries=None, weights=None):
    """Reverse mode through the layers and (optionally) the hash grid.

    Returns a gradient vector congruent to theta. Pass the entries and
    weights from encode_batch to propagate into the feature tables.
    """
    acts, zs = cache
    g = np.zeros_like(theta)
    zo = zs[-1]
    if spec.out_act == ACT_RELU:
        # subgradient 1 at exactly zero, so a zero-initialized output
        # layer (which rectifies to exact zeros) can still be pulled off
        # that state by the first updates
        dz = dY * (zo >= 0.0)
    else:
        s = 1.0 / (1.0 + np.exp(-zo))
        dz = dY * s * (1.0 - s)
    for l in range(spec.nl - 1, -1, -1):
        a_prev = acts[l]
        wv = weight_view(spec, g, l)
        wv += dz.T @ a_prev
        bias_view(spec, g, l)[:] += dz.sum(axis=0)
        if l > 0:
            da = dz @ weight_view(spec, theta, l)
            dz = da * (zs[l - 1] >= 0.0)
        else:
            dX = dz @ weight_view(spec, theta, l)
    if entries is not None:
        scatter_grid_grad(spec, g, entries, weights, dX)
    return g


# -- scalar path for render kernels -------------------------------------


@jit_kernel
def mlp_forward_s(spec, theta, xin, h1, h2):
    """Scalar forward; xin length in_dim, h1/h2 scratch >= max width.

    Returns the first three outputs (unused slots zero). Layer matvecs
    go through BLAS, so xin/h1/h2 must match theta's dtype.
    """
    for i in range(spec.in_dim):
        h1[i] = xin[i]
    cur = h1
    nxt = h2
    for l in range(spec.nl):
        din = spec.dims[l]
        dout = spec.dims[l + 1]
        w = spec.w_off[l]
        b = spec.b_off[l]
        W = theta[w : w + din * dout].reshape(dout, din)
        z = np.dot(W, cur[:din])
        if l < spec.nl - 1 or spec.out_act == ACT_RELU:
            for j in range(dout):
                a = z[j] + theta[b + j]
                nxt[j] = a if a > 0.0 else 0.0
        else:
            for j in range(dout):
                a = z[j] + theta[b + j]
                nxt[j] = 1.0 / (1.0 + np.exp(-a))
        tmp = cur
        cur = nxt
        nxt = tmp
    r = cur[0]
    g = cur[1] if spec.dims[spec.nl] > 1 else 0.0
    bl = cur[2] if spec.dims[spec.nl] > 2 else 0.0
    return r, g, bl


def forward_scalar_reference(spec, theta, xin):
    """Naive per-neuron forward used as an oracle in tests."""
    cur = [float(v) for v in xin]
    for l in range(spec.nl):
        din = int(spec.dims[l])
        dout = int(spec.dims[l + 1])
        w = int(spec.w_off[l])
        b = int(spec.b_off[l])
        nxt = []
        for j in range(dout):
            acc = float(theta[b + j])
            for i in range(din):
                acc += cur[i] * float(theta[w + j * din + i])
            if l < spec.nl - 1 or spec.out_act == ACT_RELU:
                nxt.append(max(acc, 0.0))
            else:
                nxt.append(1.0 / (1.0 + np.exp(-acc)))
        cur = nxt
    return np.array(cur)


def full_forward(spec, theta, pos, normal, albedo, rough, dirs,
                 training=False):
    """encode_batch + mlp_forward in one call (training pipeline)."""
    X, entries, weights = encode_batch(spec, theta, pos, normal, albedo,
                                       rough, dirs)
    if training:
        Y, cache = mlp_forward(spec, theta, X, training=True)
        return Y, cache, entries, weights
    return mlp_forward(spec, theta, X)


def gradient_check(spec, theta, surf, target, pdf, loss_kind="l2",
                   h=1e-3, eps=0.01, running_mean=None, indices=None):
    """Central-difference verification of the full reverse-mode gradient.

    surf is (pos, normal, albedo, rough, dirs). Works in the dtype of
    theta; use float64 for meaningful tolerances. The relative-L2
    denominator and the variance running mean are frozen across the
    perturbed evaluations, matching their stop-gradient semantics.
    Returns the maximum relative error over the checked indices
    (default: every parameter).
    """
    from . import losses

    pos, normal, albedo, rough, dirs = surf
    if running_mean is None:
        running_mean = np.array([0.3, 0.2, 0.1])

    Y0, cache, entries, weights = full_forward(
        spec, theta, pos, normal, albedo, rough, dirs, training=True)
    frozen = losses.relative_l2_denom(Y0, eps)

    def eval_loss(th, want_grad=False):
        if want_grad:
            Y, cc, en, we = full_forward(spec, th, pos, normal, albedo,
                                         rough, dirs, training=True)
        else:
            Y = full_forward(spec, th, pos, normal, albedo, rough, dirs)
        if loss_kind == "l2":
            val, dY = losses.loss_l2(Y, target, pdf)
        elif loss_kind == "relative_l2":
            val, dY = losses.loss_relative_l2(Y, target, pdf, eps,
                                              frozen_denom=frozen)
        elif loss_kind == "variance":
            val, dY = losses.loss_variance(Y, target, pdf, running_mean)
        elif loss_kind == "bce":
            val, dY = losses.loss_bce(Y, target)
        else:
            raise ValueError(loss_kind)
        if want_grad:
            return val, mlp_backward(spec, th, cc, dY, en, we)
        return val

    _, g = eval_loss(theta, want_grad=True)
    if indices is None:
        indices = range(spec.theta_len)
    gscale = np.abs(g).max()
    worst = 0.0
    for i in indices:
        keep = theta[i]
        theta[i] = keep + h
        up = eval_loss(theta)
        theta[i] = keep - h
        dn = eval_loss(theta)
        theta[i] = keep + 2.0 * h
        up2 = eval_loss(theta)
        theta[i] = keep - 2.0 * h
        dn2 = eval_loss(theta)
        theta[i] = keep
        # five-point stencil: the h^2 truncation term of the plain
        # central difference sits too close to the 1e-5 bar
        fd = (8.0 * (up - dn) - (up2 - dn2)) / (12.0 * h)
        denom = max(abs(fd), abs(g[i]), 1e-4 * gscale, 1e-12)
        err = abs(fd - g[i]) / denom
        if err > worst:
            worst = err
    return worst
