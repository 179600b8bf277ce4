"""Grid network geometry: lanes, junction wiring, signal phases, and routes.

Conventions used throughout the package:

* Intersections are laid out row-major with row 0 at the north edge; the
  intersection at (r, c) has index ``r * cols + c``.
* Sides are compass arms of a junction: 0=N, 1=E, 2=S, 3=W. "N entry lanes"
  carry traffic from the north arm into the junction (heading south).
* Each arm has 3 entry + 3 exit lanes. Lane groups within an arm follow the
  movement they serve: 0=left turn, 1=through, 2=right turn.
* A lane is a row of K cells in driving direction: cell 0 is the upstream end
  (insertion point or junction it leaves), cell K-1 the downstream end (stop
  line or network boundary). Lanes between adjacent intersections are single
  physical objects serving as exit of one junction and entry of the other.
* Signal phases cycle 0 -> 1 -> 2 -> 3 -> 0:
  0 NS-through, 1 NS-left, 2 EW-through, 3 EW-left. Right turns are always
  permitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import NetworkConfig

SIDE_N, SIDE_E, SIDE_S, SIDE_W = 0, 1, 2, 3
TURN_LEFT, TURN_THROUGH, TURN_RIGHT = 0, 1, 2
N_PHASES = 4
LANES_PER_SLICE = 24  # 4 sides x (3 entry + 3 exit)

#: row offsets into a 24-row slice; entry rows come first within each side
ENTRY_ROW = {(s, g): s * 6 + g for s in range(4) for g in range(3)}
EXIT_ROW = {(s, g): s * 6 + 3 + g for s in range(4) for g in range(3)}

#: (dr, dc) of the neighbouring intersection reached through each side
SIDE_DELTA = {SIDE_N: (-1, 0), SIDE_E: (0, 1), SIDE_S: (1, 0), SIDE_W: (0, -1)}


def opposite(side: int) -> int:
    return (side + 2) % 4


def dest_side(approach_side: int, turn: int) -> int:
    """Arm a vehicle leaves through after performing `turn` from `approach_side`.

    Entering from side s the vehicle heads toward opposite(s); its left is the
    next side clockwise from s. The compact form (s + turn + 1) % 4 reproduces
    the full left/through/right table.
    """
    return (approach_side + turn + 1) % 4


def phase_of_movement(approach_side: int, turn: int) -> int:
    """Phase index that serves (approach, turn); right turns have no phase."""
    if turn == TURN_RIGHT:
        raise ValueError("right turns are not phase-controlled")
    axis = approach_side & 1  # 0 for N/S, 1 for E/W
    return 2 * axis + (1 - turn)


def green_allows(phase: int, approach_side: int, turn: int) -> bool:
    if turn == TURN_RIGHT:
        return True
    return phase == phase_of_movement(approach_side, turn)


@dataclass(frozen=True)
class Route:
    """One directed path across the grid: lanes joined by junction movements."""

    route_class: int  # 1..6
    instance: int  # row index (classes 1-2) or column index (3-6)
    lanes: tuple[int, ...]
    movements: tuple[int, ...]  # one turn per junction crossed


@dataclass
class Network:
    """Immutable grid geometry shared by every simulation state."""

    cfg: NetworkConfig
    n_intersections: int
    n_lanes: int
    lane_cells: int
    # Per-lane wiring; junction indices are -1 for boundary source/sink ends.
    lane_up_junction: np.ndarray
    lane_up_side: np.ndarray
    lane_down_junction: np.ndarray
    lane_down_side: np.ndarray
    lane_group: np.ndarray
    # (I, 4 sides, 3 groups) lane lookup tables.
    entry_lanes: np.ndarray
    exit_lanes: np.ndarray
    # (I, 24) slice-row -> lane map and which rows are mirrored (exit rows).
    enc_lane: np.ndarray
    enc_flip: np.ndarray
    # (I, 4 phases, 2) entry lanes grouped by the phase serving them.
    phase_entry_lanes: np.ndarray
    routes: tuple[Route, ...] = field(default_factory=tuple)

    @property
    def rows(self) -> int:
        return self.cfg.rows

    @property
    def cols(self) -> int:
        return self.cfg.cols

    @property
    def shared_link_count(self) -> int:
        """Adjacent intersection pairs; each shares 6 doubly-encoded lanes."""
        return self.rows * (self.cols - 1) + self.cols * (self.rows - 1)

    @property
    def lane_is_entry(self) -> np.ndarray:
        """Lanes ending at a stop line (queue-bearing)."""
        return self.lane_down_junction >= 0


def build_network(cfg: NetworkConfig) -> Network:
    rows, cols = cfg.rows, cfg.cols
    n_i = rows * cols
    K = cfg.lane_cells

    def jidx(r: int, c: int) -> int:
        return r * cols + c

    def neighbour(r: int, c: int, side: int):
        dr, dc = SIDE_DELTA[side]
        nr, nc = r + dr, c + dc
        if 0 <= nr < rows and 0 <= nc < cols:
            return nr, nc
        return None

    up_j, up_s, down_j, down_s, groups = [], [], [], [], []
    entry = np.full((n_i, 4, 3), -1, dtype=np.int32)
    exits = np.full((n_i, 4, 3), -1, dtype=np.int32)

    def add_lane(upj, ups, dnj, dns, g) -> int:
        idx = len(groups)
        up_j.append(upj)
        up_s.append(ups)
        down_j.append(dnj)
        down_s.append(dns)
        groups.append(g)
        if dnj >= 0:
            entry[dnj, dns, g] = idx
        if upj >= 0:
            exits[upj, ups, g] = idx
        return idx

    # Deterministic creation order: row-major junctions, sides N/E/S/W.
    # Boundary arms get 3 source->entry and 3 exit->sink lanes; interior arms
    # are created once, by the junction the traffic leaves from.
    for r in range(rows):
        for c in range(cols):
            i = jidx(r, c)
            for side in range(4):
                nb = neighbour(r, c, side)
                if nb is None:
                    for g in range(3):
                        add_lane(-1, -1, i, side, g)  # inbound from outside
                    for g in range(3):
                        add_lane(i, side, -1, -1, g)  # outbound to outside
                else:
                    ni = jidx(*nb)
                    for g in range(3):
                        # Leaves i through `side`, approaches the neighbour
                        # from the facing arm.
                        add_lane(i, side, ni, opposite(side), g)

    n_lanes = len(groups)
    assert (entry >= 0).all() and (exits >= 0).all()

    enc_lane = np.zeros((n_i, LANES_PER_SLICE), dtype=np.int32)
    enc_flip = np.zeros(LANES_PER_SLICE, dtype=bool)
    for side in range(4):
        for g in range(3):
            enc_flip[EXIT_ROW[side, g]] = True
    for i in range(n_i):
        for side in range(4):
            for g in range(3):
                enc_lane[i, ENTRY_ROW[side, g]] = entry[i, side, g]
                enc_lane[i, EXIT_ROW[side, g]] = exits[i, side, g]

    phase_lanes = np.zeros((n_i, N_PHASES, 2), dtype=np.int32)
    for i in range(n_i):
        for phase in range(N_PHASES):
            axis_sides = (SIDE_N, SIDE_S) if phase < 2 else (SIDE_E, SIDE_W)
            turn = TURN_THROUGH if phase % 2 == 0 else TURN_LEFT
            phase_lanes[i, phase] = [entry[i, s, turn] for s in axis_sides]

    net = Network(
        cfg=cfg,
        n_intersections=n_i,
        n_lanes=n_lanes,
        lane_cells=K,
        lane_up_junction=np.array(up_j, dtype=np.int32),
        lane_up_side=np.array(up_s, dtype=np.int32),
        lane_down_junction=np.array(down_j, dtype=np.int32),
        lane_down_side=np.array(down_s, dtype=np.int32),
        lane_group=np.array(groups, dtype=np.int32),
        entry_lanes=entry,
        exit_lanes=exits,
        enc_lane=enc_lane,
        enc_flip=enc_flip,
        phase_entry_lanes=phase_lanes,
    )
    net.routes = tuple(_build_routes(net))
    return net


# Route classes, read as headings: classes 5 and 6 are the symmetric left-turn
# streams (enter heading south / exit east, and enter heading north / exit
# west); they turn at the first junction and continue through afterwards.
# (start corner, start side, first movement); instances span rows or columns.
_ROUTE_CLASSES = {
    1: ("row", SIDE_E, TURN_THROUGH),  # westbound through
    2: ("row", SIDE_W, TURN_THROUGH),  # eastbound through
    3: ("col", SIDE_N, TURN_THROUGH),  # southbound through
    4: ("col", SIDE_S, TURN_THROUGH),  # northbound through
    5: ("col", SIDE_N, TURN_LEFT),  # southbound, left, exits east
    6: ("col", SIDE_S, TURN_LEFT),  # northbound, left, exits west
}


def _build_routes(net: Network):
    rows, cols = net.rows, net.cols

    def jidx(r, c):
        return r * cols + c

    def start_junction(cls, k):
        side = _ROUTE_CLASSES[cls][1]
        if cls == 1:
            return k, cols - 1
        if cls == 2:
            return k, 0
        if side == SIDE_N:
            return 0, k
        return rows - 1, k

    routes = []
    for cls in sorted(_ROUTE_CLASSES):
        span, side0, turn0 = _ROUTE_CLASSES[cls]
        n_inst = rows if span == "row" else cols
        for k in range(n_inst):
            r, c = start_junction(cls, k)
            side, turn = side0, turn0
            lanes = [int(net.entry_lanes[jidx(r, c), side, turn])]
            movements = []
            while True:
                i = jidx(r, c)
                movements.append(turn)
                d = dest_side(side, turn)
                dr, dc = SIDE_DELTA[d]
                nr, nc = r + dr, c + dc
                if 0 <= nr < rows and 0 <= nc < cols:
                    # Shared lane into the next junction; after the first leg
                    # every movement is through, so the middle lane is next.
                    turn = TURN_THROUGH
                    lanes.append(int(net.exit_lanes[i, d, turn]))
                    r, c, side = nr, nc, opposite(d)
                else:
                    # Leaves the grid; land in the middle boundary exit lane.
                    lanes.append(int(net.exit_lanes[i, d, TURN_THROUGH]))
                    break
            routes.append(
                Route(
                    route_class=cls,
                    instance=k,
                    lanes=tuple(lanes),
                    movements=tuple(movements),
                )
            )
    return routes
