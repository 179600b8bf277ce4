"""Fixed-geometry tensor views of the simulator state.

Each intersection contributes a 24-row binary occupancy image: rows 0-2,
6-8, 12-14, 18-20 are its entry lanes (cell index grows toward the stop
line) and rows 3-5, 9-11, 15-17, 21-23 its exit lanes, mirrored so index 0
sits next to the junction. A lane shared by two intersections appears in
both slices, once as an exit and once (mirrored) as the neighbour's entry,
so the tensor sum exceeds the vehicle count by the shared occupancy.
"""

from __future__ import annotations

import numpy as np

from .microsim import SimState


def encode_state(state: SimState) -> np.ndarray:
    """Binary occupancy tensor of shape (I, 24, K), dtype uint8."""
    occ = (state.speed_grid >= 0).astype(np.uint8)
    net = state.net
    tensor = occ[net.enc_lane]  # (I, 24, K) gather
    tensor[:, net.enc_flip, :] = tensor[:, net.enc_flip, ::-1]
    return tensor


def encode_phase(state: SimState) -> np.ndarray:
    """One-hot phase matrix (I, 4); amber keeps the outgoing phase hot."""
    n_i = state.net.n_intersections
    mat = np.zeros((n_i, 4), dtype=np.uint8)
    mat[np.arange(n_i), state.phase] = 1
    return mat
