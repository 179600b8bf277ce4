"""Gradient-descent optimizers over a ParamStore."""

from __future__ import annotations

import numpy as np

from .model import ParamStore


class NonFiniteGradientError(RuntimeError):
    """Raised when a gradient buffer contains NaN or infinity."""


def _check_finite(params: ParamStore) -> None:
    for name, grad in params.grads.items():
        if not np.isfinite(grad).all():
            bad = int((~np.isfinite(grad)).sum())
            raise NonFiniteGradientError(
                f"non-finite gradient in '{name}' ({bad} of {grad.size} entries)"
            )


def sgd_step(params: ParamStore, lr: float) -> None:
    _check_finite(params)
    for name, arr in params.arrays.items():
        arr -= lr * params.grads[name]


class Adam:
    """Bias-corrected adaptive moments, one state slot per named array."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, lr: float) -> None:
        _check_finite(params)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, arr in params.arrays.items():
            grad = params.grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad**2
            arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
