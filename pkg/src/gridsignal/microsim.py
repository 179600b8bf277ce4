"""Deterministic cell-automaton traffic microsimulator.

Vehicles move by the deterministic car-following rule
``v <- min(v + 1, v_max, gap)`` with no random slowdown, so a trajectory is a
pure function of (network, flow, seed, action stream). The only random draw
is at reset: each route's insertion accumulator starts at a uniform [0, 1)
offset, which staggers arrivals across seeds without changing rates.

Each step applies, in fixed order: signal update, crossing initiation (stop
line to conflict zone, with a one-vehicle left-turn waiting slot per
approach), parallel lane movement, conflict-zone progression and landings,
insertion, and bookkeeping. A crossing occupies its movement's conflict-zone
slot for two steps and then lands on cell 0 of the receiving lane.

State is kept in flat parallel numpy arrays sorted by (lane, cell), plus an
(n_lanes, K) speed grid (-1 for empty cells); the few vehicles inside
junctions live in small per-movement holders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import FlowProgram, NetworkConfig, RuleParams
from .network import (
    Network,
    TURN_LEFT,
    TURN_RIGHT,
    TURN_THROUGH,
)

QUEUE_SLOT_M = 7.5  # road claimed per queued vehicle (jam spacing)

FUEL_IDLE = 0.3  # per stopped step
FUEL_MOVING = 0.1  # per unit speed per moving step
FUEL_ACCEL = 0.5  # per acceleration event

_VEH_FIELDS = ("id", "lane", "cell", "speed", "route", "leg", "wait", "fuel")


@dataclass
class _OffLaneVeh:
    """A vehicle inside a junction: conflict zone or left-turn waiting slot."""

    vid: int
    route: int
    next_leg: int
    dest_lane: int
    wait: float
    fuel: float
    prev_speed: int
    fresh: bool = True  # entered its holder this step


@dataclass
class StepReport:
    """Per-step observables needed by controllers, training, and logs."""

    low_speed_lane: np.ndarray  # (n_lanes,) vehicles at or below low speed
    grouped: np.ndarray  # (I, 4) low-speed counts by serving phase
    phase: np.ndarray  # (I,) current phase (outgoing one during amber)
    amber: np.ndarray  # (I,) remaining amber steps
    queue_m: float
    inserted: int
    exited: int
    present: int


@dataclass
class MetricRow:
    queue_m: float
    awt_s: float  # mean waiting time over exited vehicles (0 if none)
    afc: float  # mean fuel proxy over exited vehicles (0 if none)
    n_exited: int
    present: int
    mean_green: np.ndarray  # (I, 4) mean completed green duration, seconds
    n_green_intervals: int


@dataclass
class SimState:
    net: Network
    flow: FlowProgram
    episode_steps: int
    low_speed_max: int  # highest cell/step speed counted as "low"
    rng: np.random.Generator
    # Signals.
    phase: np.ndarray
    amber: np.ndarray
    green_age: np.ndarray  # completed green steps of the current phase
    # Vehicles on lanes, parallel arrays sorted by (lane, cell).
    veh_id: np.ndarray
    veh_lane: np.ndarray
    veh_cell: np.ndarray
    veh_speed: np.ndarray
    veh_route: np.ndarray
    veh_leg: np.ndarray
    veh_wait: np.ndarray
    veh_fuel: np.ndarray
    speed_grid: np.ndarray  # (n_lanes, K), -1 empty
    # Junction holders: zones indexed i*12 + side*3 + turn, slots i*4 + side.
    zone_occupant: list
    zone_rem: np.ndarray
    slot_occupant: list
    # Insertion bookkeeping (one entry per route instance).
    route_rates: np.ndarray  # (n_segments, n_routes) vehicles per second
    route_origin: np.ndarray
    accumulators: np.ndarray
    # Counters and episode stats.
    step_idx: int = 0
    next_id: int = 0
    inserted: int = 0
    exited: int = 0
    sum_wait_exited: float = 0.0
    sum_fuel_exited: float = 0.0
    green_sum: np.ndarray = field(default=None)
    green_count: np.ndarray = field(default=None)
    _entry_ids: np.ndarray = field(default=None)


def _zone_index(i: int, side: int, turn: int) -> int:
    return i * 12 + side * 3 + turn


def reset(
    net: Network,
    flow: FlowProgram,
    seed,
    episode_s: float,
    rule: RuleParams | None = None,
) -> SimState:
    """Fresh empty network with phase 0 green everywhere."""
    cfg = net.cfg
    rule = rule or RuleParams()
    n_i = net.n_intersections
    n_routes = len(net.routes)
    rng = np.random.default_rng(seed)
    rates = np.array(
        [
            [seg[r.route_class - 1] for r in net.routes]
            for seg in flow.rates_per_s()
        ],
        dtype=np.float64,
    )
    empty_i = lambda: np.empty(0, dtype=np.int64)
    empty_f = lambda: np.empty(0, dtype=np.float64)
    state = SimState(
        net=net,
        flow=flow,
        episode_steps=max(1, int(round(episode_s / cfg.step_s))),
        low_speed_max=rule.low_speed_cells(cfg),
        rng=rng,
        phase=np.zeros(n_i, dtype=np.int64),
        amber=np.zeros(n_i, dtype=np.int64),
        green_age=np.zeros(n_i, dtype=np.int64),
        veh_id=empty_i(),
        veh_lane=empty_i(),
        veh_cell=empty_i(),
        veh_speed=empty_i(),
        veh_route=empty_i(),
        veh_leg=empty_i(),
        veh_wait=empty_f(),
        veh_fuel=empty_f(),
        speed_grid=np.full((net.n_lanes, net.lane_cells), -1, dtype=np.int64),
        zone_occupant=[None] * (n_i * 12),
        zone_rem=np.zeros(n_i * 12, dtype=np.int64),
        slot_occupant=[None] * (n_i * 4),
        route_rates=rates,
        route_origin=np.array([r.lanes[0] for r in net.routes], dtype=np.int64),
        accumulators=rng.random(n_routes),
        green_sum=np.zeros((n_i, 4), dtype=np.float64),
        green_count=np.zeros((n_i, 4), dtype=np.int64),
        _entry_ids=np.flatnonzero(net.lane_is_entry),
    )
    return state


def vehicles_present(state: SimState) -> int:
    on_lanes = state.veh_id.size
    in_zones = sum(1 for z in state.zone_occupant if z is not None)
    in_slots = sum(1 for s in state.slot_occupant if s is not None)
    return on_lanes + in_zones + in_slots


def low_speed_counts(state: SimState) -> np.ndarray:
    """Per-lane count of vehicles at or below the low-speed threshold."""
    slow = state.veh_speed <= state.low_speed_max
    return np.bincount(
        state.veh_lane[slow], minlength=state.net.n_lanes
    ).astype(np.int64)


def grouped_low_speed(state: SimState) -> np.ndarray:
    """(I, 4) low-speed counts summed over each phase's entry-lane pair."""
    low = low_speed_counts(state)
    return low[state.net.phase_entry_lanes].sum(axis=2)


def _queue_m(state: SimState) -> float:
    grid = state.speed_grid[state._entry_ids]
    stopped = grid[:, ::-1] == 0  # column 0 = stop line after mirroring
    runs = np.cumprod(stopped, axis=1).sum(axis=1)
    return float(runs.sum()) * QUEUE_SLOT_M


def metrics_snapshot(state: SimState) -> MetricRow:
    n = state.exited
    counts = np.maximum(state.green_count, 1)
    return MetricRow(
        queue_m=_queue_m(state),
        awt_s=state.sum_wait_exited / n if n else 0.0,
        afc=state.sum_fuel_exited / n if n else 0.0,
        n_exited=n,
        present=vehicles_present(state),
        mean_green=state.green_sum / counts,
        n_green_intervals=int(state.green_count.sum()),
    )


def _compress(state: SimState, keep: np.ndarray) -> None:
    for name in _VEH_FIELDS:
        attr = f"veh_{name}"
        setattr(state, attr, getattr(state, attr)[keep])


def _pop_offlane(state: SimState, idx: int, dest_lane: int) -> _OffLaneVeh:
    return _OffLaneVeh(
        vid=int(state.veh_id[idx]),
        route=int(state.veh_route[idx]),
        next_leg=int(state.veh_leg[idx]) + 1,
        dest_lane=dest_lane,
        wait=float(state.veh_wait[idx]),
        fuel=float(state.veh_fuel[idx]),
        prev_speed=int(state.veh_speed[idx]),
    )


def step(state: SimState, action) -> StepReport:
    net = state.net
    cfg = net.cfg
    K = net.lane_cells
    n_i = net.n_intersections
    action = np.asarray(action).reshape(-1)
    if action.shape != (n_i,):
        raise ValueError(f"action must have shape ({n_i},), got {action.shape}")

    # --- 1. signals -------------------------------------------------------
    in_amber = state.amber > 0
    state.amber[in_amber] -= 1
    expired = in_amber & (state.amber == 0)
    state.phase[expired] = (state.phase[expired] + 1) % 4
    state.green_age[expired] = 0
    requests = np.flatnonzero(~in_amber & (action != 0))
    for i in requests:
        state.green_sum[i, state.phase[i]] += state.green_age[i] * cfg.step_s
        state.green_count[i, state.phase[i]] += 1
    if cfg.amber_steps == 0:
        state.phase[requests] = (state.phase[requests] + 1) % 4
        state.green_age[requests] = 0
    else:
        state.amber[requests] = cfg.amber_steps

    # --- 2. crossing initiation and waiting slots ------------------------
    lane_starts = np.searchsorted(state.veh_lane, np.arange(net.n_lanes + 1))
    to_remove: list[int] = []
    routes = net.routes
    for i in range(n_i):
        ph = int(state.phase[i])
        amber_now = state.amber[i] > 0
        for side in range(4):
            axis = side & 1
            si = i * 4 + side
            # Waiting slot discharges into the zone during its left phase.
            occ = state.slot_occupant[si]
            if occ is not None and not amber_now and ph == 2 * axis + 1:
                zi = _zone_index(i, side, TURN_LEFT)
                # A stopped vehicle on the receiving cell means the exit is
                # blocked; a moving one will have cleared it by landing time.
                if (
                    state.zone_occupant[zi] is None
                    and state.speed_grid[occ.dest_lane, 0] != 0
                ):
                    state.zone_occupant[zi] = occ
                    state.zone_rem[zi] = 2
                    occ.fresh = False
                    state.slot_occupant[si] = None
            # Stop-line heads.
            for turn in (TURN_LEFT, TURN_THROUGH, TURN_RIGHT):
                lane = int(net.entry_lanes[i, side, turn])
                lo, hi = lane_starts[lane], lane_starts[lane + 1]
                if hi <= lo:
                    continue
                head = hi - 1
                if state.veh_cell[head] != K - 1:
                    continue
                route = int(state.veh_route[head])
                if route < 0:
                    continue  # no assigned path: never crosses
                if turn == TURN_LEFT:
                    # May advance into the waiting slot during its own axis's
                    # through or left phase, never during amber.
                    if amber_now or ph not in (2 * axis, 2 * axis + 1):
                        continue
                    if state.slot_occupant[si] is not None:
                        continue
                    dest = routes[route].lanes[int(state.veh_leg[head]) + 1]
                    state.slot_occupant[si] = _pop_offlane(state, head, dest)
                    state.speed_grid[lane, K - 1] = -1
                    to_remove.append(head)
                else:
                    if turn != TURN_RIGHT and (
                        amber_now or ph != 2 * axis + (1 - turn)
                    ):
                        continue
                    zi = _zone_index(i, side, turn)
                    if state.zone_occupant[zi] is not None:
                        continue
                    dest = routes[route].lanes[int(state.veh_leg[head]) + 1]
                    if state.speed_grid[dest, 0] == 0:
                        continue  # exit blocked by a stopped vehicle
                    state.zone_occupant[zi] = _pop_offlane(state, head, dest)
                    state.zone_rem[zi] = 2
                    state.speed_grid[lane, K - 1] = -1
                    to_remove.append(head)
    if to_remove:
        keep = np.ones(state.veh_id.size, dtype=bool)
        keep[to_remove] = False
        _compress(state, keep)

    # --- 3. parallel lane movement ---------------------------------------
    n = state.veh_id.size
    if n:
        lane_arr = state.veh_lane
        cell = state.veh_cell
        speed = state.veh_speed
        gap = np.empty(n, dtype=np.int64)
        follower = np.zeros(n, dtype=bool)
        follower[:-1] = lane_arr[1:] == lane_arr[:-1]
        fidx = np.flatnonzero(follower)
        gap[fidx] = cell[fidx + 1] - cell[fidx] - 1
        lidx = np.flatnonzero(~follower)
        ends_at_junction = net.lane_down_junction[lane_arr[lidx]] >= 0
        gap[lidx] = np.where(ends_at_junction, K - 1 - cell[lidx], K)
        v = np.minimum(np.minimum(speed + 1, cfg.v_max), gap)
        # Fuel and waiting accrue from the realized motion of this step.
        idle = v == 0
        state.veh_fuel += np.where(idle, FUEL_IDLE, FUEL_MOVING * v)
        state.veh_fuel += FUEL_ACCEL * (v > speed)
        state.veh_wait += np.where(idle, cfg.step_s, 0.0)
        new_cell = cell + v
        exiting = new_cell >= K  # only boundary-exit leaders can
        moved = v > 0
        state.speed_grid[lane_arr[moved], cell[moved]] = -1
        keep_on = moved & ~exiting
        state.speed_grid[lane_arr[keep_on], new_cell[keep_on]] = v[keep_on]
        still = ~moved
        state.speed_grid[lane_arr[still], cell[still]] = 0
        state.veh_cell = new_cell
        state.veh_speed = v
        if exiting.any():
            state.exited += int(exiting.sum())
            state.sum_wait_exited += float(state.veh_wait[exiting].sum())
            state.sum_fuel_exited += float(state.veh_fuel[exiting].sum())
            _compress(state, ~exiting)

    # --- 4. conflict zones: progress, then land --------------------------
    pending: list[tuple] = []  # (sort key, id, lane, speed, route, leg, wait, fuel)
    for zi in range(n_i * 12):
        occ = state.zone_occupant[zi]
        if occ is None:
            continue
        occ.fuel += FUEL_MOVING + (FUEL_ACCEL if occ.prev_speed < 1 else 0.0)
        occ.prev_speed = 1
        if state.zone_rem[zi] > 0:
            state.zone_rem[zi] -= 1
        if state.zone_rem[zi] == 0 and state.speed_grid[occ.dest_lane, 0] < 0:
            state.speed_grid[occ.dest_lane, 0] = 1
            pending.append(
                (occ.dest_lane, occ.vid, occ.dest_lane, 1, occ.route,
                 occ.next_leg, occ.wait, occ.fuel)
            )
            state.zone_occupant[zi] = None

    # --- 5. waiting-slot accrual ------------------------------------------
    for occ in state.slot_occupant:
        if occ is None:
            continue
        if occ.fresh:
            occ.fuel += FUEL_MOVING + (FUEL_ACCEL if occ.prev_speed < 1 else 0.0)
            occ.prev_speed = 1
            occ.fresh = False
        else:
            occ.fuel += FUEL_IDLE
            occ.wait += cfg.step_s
            occ.prev_speed = 0

    # --- 6. insertion ------------------------------------------------------
    n_seg = state.route_rates.shape[0]
    seg = min(n_seg - 1, n_seg * state.step_idx // state.episode_steps)
    state.accumulators += state.route_rates[seg] * cfg.step_s
    for k in range(state.route_origin.size):
        if state.accumulators[k] >= 1.0:
            origin = int(state.route_origin[k])
            if state.speed_grid[origin, 0] < 0:
                state.speed_grid[origin, 0] = 0
                pending.append((origin, state.next_id, origin, 0, k, 0, 0.0, 0.0))
                state.next_id += 1
                state.accumulators[k] -= 1.0
                state.inserted += 1

    # --- 7. merge landings and insertions, then report --------------------
    if pending:
        pending.sort(key=lambda rec: rec[0])
        keys = state.veh_lane * np.int64(K) + state.veh_cell
        new_lanes = np.array([rec[0] for rec in pending], dtype=np.int64)
        pos = np.searchsorted(keys, new_lanes * np.int64(K))
        cols = list(zip(*pending))
        state.veh_id = np.insert(state.veh_id, pos, np.array(cols[1], dtype=np.int64))
        state.veh_lane = np.insert(state.veh_lane, pos, np.array(cols[2], dtype=np.int64))
        state.veh_cell = np.insert(state.veh_cell, pos, np.zeros(len(pending), dtype=np.int64))
        state.veh_speed = np.insert(state.veh_speed, pos, np.array(cols[3], dtype=np.int64))
        state.veh_route = np.insert(state.veh_route, pos, np.array(cols[4], dtype=np.int64))
        state.veh_leg = np.insert(state.veh_leg, pos, np.array(cols[5], dtype=np.int64))
        state.veh_wait = np.insert(state.veh_wait, pos, np.array(cols[6], dtype=np.float64))
        state.veh_fuel = np.insert(state.veh_fuel, pos, np.array(cols[7], dtype=np.float64))

    state.step_idx += 1
    green = state.amber == 0
    state.green_age[green] += 1

    low = low_speed_counts(state)
    return StepReport(
        low_speed_lane=low,
        grouped=low[net.phase_entry_lanes].sum(axis=2),
        phase=state.phase.copy(),
        amber=state.amber.copy(),
        queue_m=_queue_m(state),
        inserted=state.inserted,
        exited=state.exited,
        present=vehicles_present(state),
    )


def place_vehicle(
    state: SimState, lane: int, cell: int, speed: int = 0, route: int | None = None
) -> int:
    """Inject a vehicle for scenario setup and tests; returns its id.

    The (route, leg) pair is resolved from the first route whose path uses
    this lane so the vehicle can cross junctions; lanes on no route (e.g.
    right-turn lanes) get route -1 and will hold at the stop line forever.
    """
    net = state.net
    lane = int(lane)
    cell = int(cell)
    if not (0 <= cell < net.lane_cells):
        raise ValueError("cell out of range")
    if state.speed_grid[lane, cell] >= 0:
        raise ValueError(f"cell {cell} of lane {lane} is occupied")
    if route is None:
        route, leg = -1, 0
        for ri, r in enumerate(net.routes):
            if lane in r.lanes:
                route, leg = ri, r.lanes.index(lane)
                break
    else:
        leg = net.routes[route].lanes.index(lane) if route >= 0 else 0
    vid = state.next_id
    state.next_id += 1
    key = lane * np.int64(net.lane_cells) + cell
    keys = state.veh_lane * np.int64(net.lane_cells) + state.veh_cell
    pos = int(np.searchsorted(keys, key))
    values = {
        "id": vid, "lane": lane, "cell": cell, "speed": speed,
        "route": route, "leg": leg, "wait": 0.0, "fuel": 0.0,
    }
    for name in _VEH_FIELDS:
        attr = f"veh_{name}"
        setattr(state, attr, np.insert(getattr(state, attr), pos, values[name]))
    state.speed_grid[lane, cell] = speed
    state.inserted += 1
    return vid


def vehicle_info(state: SimState, vid: int) -> dict | None:
    """Locate a vehicle by id across lanes, zones, and waiting slots."""
    hit = np.flatnonzero(state.veh_id == vid)
    if hit.size:
        j = int(hit[0])
        return {
            "where": "lane",
            "lane": int(state.veh_lane[j]),
            "cell": int(state.veh_cell[j]),
            "speed": int(state.veh_speed[j]),
            "wait_s": float(state.veh_wait[j]),
            "fuel": float(state.veh_fuel[j]),
        }
    for kind, holders in (("zone", state.zone_occupant), ("slot", state.slot_occupant)):
        for occ in holders:
            if occ is not None and occ.vid == vid:
                return {
                    "where": kind,
                    "lane": None,
                    "cell": None,
                    "speed": occ.prev_speed,
                    "wait_s": occ.wait,
                    "fuel": occ.fuel,
                }
    return None
