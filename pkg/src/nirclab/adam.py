"""Adam with bias correction over the flat parameter vector."""

from __future__ import annotations

import numpy as np


class AdamState:
    def __init__(self, theta, lr=0.01, beta1=0.9, beta2=0.99, eps=1e-8):
        self.m = np.zeros_like(theta)
        self.v = np.zeros_like(theta)
        self.t = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.skipped = 0


def adam_step(state, theta, grad):
    """One in-place update. Returns False (and skips) on non-finite grads."""
    if not np.all(np.isfinite(grad)):
        state.skipped += 1
        return False
    state.t += 1
    b1 = state.beta1
    b2 = state.beta2
    state.m += (1.0 - b1) * (grad - state.m)
    state.v += (1.0 - b2) * (grad * grad - state.v)
    mh = state.m / (1.0 - b1 ** state.t)
    vh = state.v / (1.0 - b2 ** state.t)
    theta -= (state.lr * mh / (np.sqrt(vh) + state.eps)).astype(theta.dtype)
    return True
