"""Training losses. Each returns (scalar loss, gradient w.r.t. prediction).

All three radiance losses divide by the sampling pdf of the recorded
direction. The relative L2 denominator uses the prediction squared but
is treated as a constant during differentiation; callers doing
finite-difference checks must pass the frozen denominator explicitly so
both evaluations share it. Values and gradients are means over batch
entries and channels, so the gradient matches the scalar loss exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidSampleError


def _check_pdf(pdf):
    if np.any(pdf <= 0.0):
        raise InvalidSampleError("sample pdf must be positive")


def loss_l2(prediction, target, pdf):
    """Squared difference scaled by 1/pdf."""
    _check_pdf(pdf)
    p = pdf[:, None]
    diff = prediction - target
    val = diff * diff / p
    n = val.size
    return float(val.mean()), 2.0 * diff / p / n


def loss_relative_l2(prediction, target, pdf, eps=0.01, frozen_denom=None):
    """Squared difference over pdf * (prediction^2 + eps), denominator frozen."""
    _check_pdf(pdf)
    if frozen_denom is None:
        frozen_denom = prediction * prediction + eps
    p = pdf[:, None]
    diff = prediction - target
    val = diff * diff / (p * frozen_denom)
    n = val.size
    return float(val.mean()), 2.0 * diff / (p * frozen_denom) / n


def relative_l2_denom(prediction, eps=0.01):
    """The sg() denominator, captured before a finite-difference sweep."""
    return prediction * prediction + eps


def loss_variance(prediction, target, pdf, running_mean):
    """Squared deviation of the shifted residual sample from its running mean.

    running_mean is the externally tracked estimate of the residual
    integral (EMA over frames), treated as a constant.
    """
    _check_pdf(pdf)
    p = pdf[:, None]
    dev = (target - prediction) / p - running_mean[None, :]
    val = dev * dev
    n = val.size
    return float(val.mean()), -2.0 * dev / p / n


def loss_bce(prediction, target):
    """Binary cross-entropy for visibility targets in [0,1]."""
    q = np.clip(prediction, 1e-6, 1.0 - 1e-6)
    val = -(target * np.log(q) + (1.0 - target) * np.log(1.0 - q))
    n = val.size
    grad = (q - target) / (q * (1.0 - q)) / n
    return float(val.mean()), grad
