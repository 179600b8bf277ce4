"""Shared policy/value network over the occupancy tensor and phase matrix.

Pipeline: the (I, 24, K) binary tensor enters as a 24xK image with the I
intersection slices as input channels, then

    conv 5x5 -> 32 maps, ReLU -> maxpool 1x2
    conv 3x3 -> 64 maps, ReLU -> maxpool 2x2
    flatten, concatenate with a linear embedding of the flattened phase
    matrix, fully connected 500 ReLU, output I + 1 units:
    I sigmoid switch probabilities and one linear state value.

Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS]; outside the open
interval the clamp is active and its gradient is exactly zero, which keeps
analytic gradients consistent with finite differences of the clamped loss.
"""

from __future__ import annotations

import numpy as np

from .ops import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    sigmoid,
)

PROB_EPS = 1e-6

J_ROWS = 24  # lane rows per intersection slice


class ParamStore:
    """Named parameter arrays with aligned gradient buffers."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = dict(arrays)
        self.grads = {k: np.zeros_like(v) for k, v in self.arrays.items()}

    @property
    def names(self):
        return self.arrays.keys()

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.arrays.items()})

    def l2(self) -> float:
        return float(sum((v**2).sum() for v in self.arrays.values()))

    def n_params(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class PolicyValueNet:
    def __init__(
        self,
        n_intersections: int,
        lane_cells: int,
        conv1_filters: int = 32,
        conv2_filters: int = 64,
        embed_dim: int = 64,
        fc_units: int = 500,
        dtype=np.float32,
    ):
        self.n_intersections = n_intersections
        self.lane_cells = lane_cells
        self.conv1_filters = conv1_filters
        self.conv2_filters = conv2_filters
        self.embed_dim = embed_dim
        self.fc_units = fc_units
        self.dtype = np.dtype(dtype)

        h1, w1 = J_ROWS - 4, lane_cells - 4  # conv1 5x5 valid
        h1p, w1p = h1 // 1, w1 // 2  # pool 1x2
        h2, w2 = h1p - 2, w1p - 2  # conv2 3x3 valid
        h2p, w2p = h2 // 2, w2 // 2  # pool 2x2
        if min(h1, w1, h2, w2, h2p, w2p) < 1:
            raise ValueError(f"lane_cells={lane_cells} too small for the conv stack")
        self.conv_out_shape = (h2p, w2p, conv2_filters)
        self.flat_features = h2p * w2p * conv2_filters

    def init_params(self, rng: np.random.Generator) -> ParamStore:
        i, dt = self.n_intersections, self.dtype
        c1, c2, e, f = (
            self.conv1_filters,
            self.conv2_filters,
            self.embed_dim,
            self.fc_units,
        )
        arrays = {
            "conv1_w": _he_uniform(rng, (5, 5, i, c1), 5 * 5 * i, dt),
            "conv1_b": np.zeros(c1, dtype=dt),
            "conv2_w": _he_uniform(rng, (3, 3, c1, c2), 3 * 3 * c1, dt),
            "conv2_b": np.zeros(c2, dtype=dt),
            "embed_w": _xavier_uniform(rng, (4 * i, e), 4 * i, e, dt),
            "embed_b": np.zeros(e, dtype=dt),
            "fc_w": _he_uniform(
                rng, (self.flat_features + e, f), self.flat_features + e, dt
            ),
            "fc_b": np.zeros(f, dtype=dt),
            "out_w": _xavier_uniform(rng, (f, i + 1), f, i + 1, dt),
            "out_b": np.zeros(i + 1, dtype=dt),
        }
        return ParamStore(arrays)

    def forward(self, params: ParamStore, x, h):
        """x (N, I, 24, K), h (N, I, 4) -> probs (N, I), value (N,), cache."""
        a = params.arrays
        n = x.shape[0]
        xi = np.ascontiguousarray(
            np.asarray(x, dtype=self.dtype).transpose(0, 2, 3, 1)
        )
        c1, cc1 = conv2d_forward(xi, a["conv1_w"], a["conv1_b"])
        r1, m1 = relu_forward(c1)
        p1, cp1 = maxpool_forward(r1, 1, 2)
        c2, cc2 = conv2d_forward(p1, a["conv2_w"], a["conv2_b"])
        r2, m2 = relu_forward(c2)
        p2, cp2 = maxpool_forward(r2, 2, 2)
        flat = p2.reshape(n, self.flat_features)
        hf = np.asarray(h, dtype=self.dtype).reshape(n, 4 * self.n_intersections)
        emb, ce = dense_forward(hf, a["embed_w"], a["embed_b"])
        cat = np.concatenate([flat, emb], axis=1)
        fc, cf = dense_forward(cat, a["fc_w"], a["fc_b"])
        fr, mf = relu_forward(fc)
        out, co = dense_forward(fr, a["out_w"], a["out_b"])
        raw = sigmoid(out[:, : self.n_intersections])
        probs = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
        value = out[:, self.n_intersections]
        cache = (cc1, m1, cp1, cc2, m2, cp2, ce, cf, mf, co, raw, p2.shape)
        return probs, value, cache

    def backward(self, params: ParamStore, cache, dprobs, dvalue) -> None:
        """Fill params.grads from dL/dprobs and dL/dvalue (overwrites)."""
        cc1, m1, cp1, cc2, m2, cp2, ce, cf, mf, co, raw, p2_shape = cache
        g = params.grads
        n, i = dprobs.shape
        active = (raw > PROB_EPS) & (raw < 1.0 - PROB_EPS)
        dz = np.zeros((n, i + 1), dtype=self.dtype)
        dz[:, :i] = np.asarray(dprobs, dtype=self.dtype) * raw * (1.0 - raw) * active
        dz[:, i] = np.asarray(dvalue, dtype=self.dtype)
        dfr, g["out_w"][...], g["out_b"][...] = dense_backward(dz, co)
        dfc = relu_backward(dfr, mf)
        dcat, g["fc_w"][...], g["fc_b"][...] = dense_backward(dfc, cf)
        dflat = dcat[:, : self.flat_features]
        demb = dcat[:, self.flat_features :]
        _, g["embed_w"][...], g["embed_b"][...] = dense_backward(demb, ce)
        dp2 = dflat.reshape(p2_shape)
        dr2 = maxpool_backward(dp2, cp2)
        dc2 = relu_backward(dr2, m2)
        dp1, g["conv2_w"][...], g["conv2_b"][...] = conv2d_backward(dc2, cc2)
        dr1 = maxpool_backward(dp1, cp1)
        dc1 = relu_backward(dr1, m1)
        _, g["conv1_w"][...], g["conv1_b"][...] = conv2d_backward(dc1, cc1)
