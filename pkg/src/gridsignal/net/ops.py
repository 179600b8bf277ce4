"""Reverse-mode primitives for the policy/value network.

Each forward op returns (output, cache); the matching backward consumes the
cache and the upstream gradient. Convolutions are valid (no padding), stride
1, channels-last; pooling floor-divides and crops leftover rows or columns.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b):
    """x (N,H,W,Cin), w (kh,kw,Cin,Cout), b (Cout,) -> (N,H',W',Cout)."""
    kh, kw, cin, cout = w.shape
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
    # windows: (N, H', W', Cin, kh, kw) -> columns (N*H'*W', kh*kw*Cin)
    n, ho, wo = windows.shape[:3]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    y = cols @ w.reshape(kh * kw * cin, cout) + b
    return y.reshape(n, ho, wo, cout), (x, w)


def conv2d_backward(dy, cache):
    x, w = cache
    kh, kw, cin, cout = w.shape
    n, ho, wo, _ = dy.shape
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    # Accumulate one kernel offset at a time: 25 or 9 small GEMMs.
    for i in range(kh):
        for j in range(kw):
            patch = x[:, i : i + ho, j : j + wo, :]
            dw[i, j] = np.tensordot(patch, dy, axes=([0, 1, 2], [0, 1, 2]))
            dx[:, i : i + ho, j : j + wo, :] += dy @ w[i, j].T
    db = dy.sum(axis=(0, 1, 2))
    return dx, dw, db


def maxpool_forward(x, ph, pw):
    n, h, w, c = x.shape
    h2, w2 = h // ph, w // pw
    tiles = (
        x[:, : h2 * ph, : w2 * pw, :]
        .reshape(n, h2, ph, w2, pw, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, h2, w2, c, ph * pw)
    )
    arg = tiles.argmax(axis=-1)  # first occurrence wins ties
    y = np.take_along_axis(tiles, arg[..., None], axis=-1)[..., 0]
    return y, (x.shape, ph, pw, arg)


def maxpool_backward(dy, cache):
    shape, ph, pw, arg = cache
    n, h, w, c = shape
    h2, w2 = h // ph, w // pw
    tiles = np.zeros((n, h2, w2, c, ph * pw), dtype=dy.dtype)
    np.put_along_axis(tiles, arg[..., None], dy[..., None], axis=-1)
    dx = np.zeros(shape, dtype=dy.dtype)
    dx[:, : h2 * ph, : w2 * pw, :] = (
        tiles.reshape(n, h2, w2, c, ph, pw)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, h2 * ph, w2 * pw, c)
    )
    return dx


def relu_forward(x):
    y = np.maximum(x, 0)
    return y, x > 0


def relu_backward(dy, mask):
    return dy * mask


def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def sigmoid(z):
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
