"""Image error metrics and streaming moment accumulators.

All relative metrics share one convention: the reference enters the
denominator with a small epsilon so dark pixels neither explode nor
divide by zero.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np


def mrse(img, ref, eps=0.01):
    """Mean relative squared error of img against ref.

    Per element: (img - ref)^2 / (ref^2 + eps), averaged over every
    pixel and channel.
    """
    img = np.asarray(img, np.float64)
    ref = np.asarray(ref, np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch {img.shape} vs {ref.shape}")
    d = img - ref
    return float(np.mean(d * d / (ref * ref + eps)))


def smape(img, ref):
    """Symmetric mean absolute percentage error in [0, 2].

    Stands in for a perceptual metric: |a-b| / ((|a|+|b|)/2), with
    exact-zero pairs counted as zero error.
    """
    img = np.asarray(img, np.float64)
    ref = np.asarray(ref, np.float64)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch {img.shape} vs {ref.shape}")
    num = np.abs(img - ref)
    den = 0.5 * (np.abs(img) + np.abs(ref))
    out = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return float(np.mean(out))


def relative_bias_squared(mean_img, ref, eps=0.01):
    """Mean of ((mean_img - ref) / (ref + eps))^2 over pixels/channels."""
    mean_img = np.asarray(mean_img, np.float64)
    ref = np.asarray(ref, np.float64)
    b = (mean_img - ref) / (ref + eps)
    return float(np.mean(b * b))


def relative_variance(var_img, ref, eps=0.01):
    """Mean of var / (ref + eps)^2 over pixels/channels."""
    var_img = np.asarray(var_img, np.float64)
    ref = np.asarray(ref, np.float64)
    d = ref + eps
    return float(np.mean(var_img / (d * d)))


class Decomposition(NamedTuple):
    rbias2: float
    rvar: float
    n: int
    z: np.ndarray  # per-element bias z-score, 0 where variance is 0


def bias_variance_decompose(stack, ref, eps=0.01):
    """Split ensemble error into relative squared bias and variance.

    stack has shape (n, ...) with each row one independent render.
    The z map lets callers test the no-bias hypothesis per element:
    for an unbiased estimator roughly 99.7% of finite z fall in [-3, 3].
    Fewer than 64 renders make the split noisy, so that warns.
    """
    stack = np.asarray(stack, np.float64)
    ref = np.asarray(ref, np.float64)
    n = stack.shape[0]
    if stack.shape[1:] != ref.shape:
        raise ValueError(f"shape mismatch {stack.shape[1:]} vs {ref.shape}")
    if n < 2:
        raise ValueError("need at least 2 renders to estimate variance")
    if n < 64:
        warnings.warn(f"bias/variance split from only {n} renders",
                      stacklevel=2)
    mean = stack.mean(axis=0)
    var = stack.var(axis=0, ddof=1)
    bias = mean - ref
    se = np.sqrt(var / n)
    z = np.where(se > 0.0, bias / np.where(se > 0.0, se, 1.0), 0.0)
    return Decomposition(relative_bias_squared(mean, ref, eps),
                         relative_variance(var, ref, eps), n, z)


class Welford:
    """Streaming mean and variance via the (count, mean, M2) update.

    Accepts scalars or arrays of one fixed shape.
    """

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def add(self, x):
        x = np.asarray(x, np.float64)
        self.count += 1
        if self.count == 1:
            self.mean = x.copy() if x.ndim else float(x)
            self._m2 = np.zeros_like(x) if x.ndim else 0.0
            return
        d = x - self.mean
        self.mean = self.mean + d / self.count
        self._m2 = self._m2 + d * (x - self.mean)

    @property
    def variance(self):
        """Sample variance (ddof=1); zero until two values are in."""
        if self.count < 2:
            return np.zeros_like(self.mean) if np.ndim(self.mean) else 0.0
        return self._m2 / (self.count - 1)
