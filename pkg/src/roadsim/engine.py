"""Discrete-time simulation kernel.

One `Simulation` instance advances one road network (the whole network for a
sequential run, or one partition's sub-network for a parallel worker) in
fixed 0.5 s timesteps.  Every step executes, in order:

    insert departures -> signals -> [regroup] -> plan moves ->
    junction approaches -> right of way -> execute movement ->
    [follower fast path] -> change lanes -> [disband check]

All plans are computed from start-of-step state, then applied, so vehicles
react to where their neighbours were at the beginning of the step.  The
kernel is single-threaded; parallelism comes from running one instance per
partition with border-state exchange between steps (see sync module).

Edge and vehicle role constants describe the border replication scheme:
a border edge is PRIMARY on the side owning its destination junction and
SHADOW on the source side; the authoritative copy of a vehicle on a border
edge lives on the primary side, while the shadow copy keeps simulating
locally (blocking its followers) and is overwritten by state updates.
Shadow vehicles never register junction approaches, never cross the lane
end, never change lanes and never arrive.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .grouping import GroupingConfig, detect_groups, disband_check, follower_update, lane_zones
from .kinematics import CfmParams, LaneContext, lane_change_decision, next_speed, safe_speed
from .metrics import RunMetrics
from .netmodel import RoadNetwork

log = logging.getLogger(__name__)

# vehicle roles
NORMAL = 0
PRIMARY = 1
SHADOW = 2

# edge roles
EDGE_INTERNAL = 0
EDGE_PRIMARY = 1   # border edge, this side owns the destination junction
EDGE_SHADOW = 2    # border edge, this side owns the source junction


class SimulationInvariantError(Exception):
    """Internal invariant violated (collision, double occupancy, protocol)."""


@dataclass
class SimulationConfig:
    step_length: float = 0.5
    end_time: float = 3600.0
    grouping: GroupingConfig | None = None
    params: CfmParams = field(default_factory=CfmParams)

    def __post_init__(self):
        if self.step_length <= 0:
            raise ValueError("step_length must be positive")
        steps = self.end_time / self.step_length
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("end_time must be a multiple of step_length")

    @property
    def total_steps(self) -> int:
        return int(round(self.end_time / self.step_length))


class Vehicle:
    __slots__ = (
        "vid", "route", "route_index", "edge", "lane", "pos", "speed",
        "depart_time", "leader_link", "role",
        "_plan", "_cross", "_granted",
    )

    def __init__(self, vid, route, edge, lane, pos, speed, depart_time, role=NORMAL):
        self.vid = vid
        self.route = route            # tuple of edge ids (remaining route incl. current)
        self.route_index = 0
        self.edge = edge              # current edge id
        self.lane = lane
        self.pos = pos                # front bumper, metres from lane start
        self.speed = speed
        self.depart_time = depart_time
        self.leader_link = None       # group leader id when following, else None
        self.role = role
        self._plan = 0.0
        self._cross = None            # (connection, to_edge_id, to_lane) when a crossing is planned
        self._granted = False

    def __repr__(self):
        return f"<Vehicle {self.vid} {self.edge}#{self.lane}@{self.pos:.2f} v={self.speed:.2f}>"


@dataclass
class TripRecord:
    depart_time: float
    arrive_time: float | None
    distance: float


class TripLog:
    """Per-vehicle depart/arrive times and travelled distance."""

    def __init__(self, rows: dict[str, TripRecord] | None = None):
        self.rows: dict[str, TripRecord] = rows or {}

    def arrived(self) -> dict[str, TripRecord]:
        return {k: r for k, r in self.rows.items() if r.arrive_time is not None}

    def en_route(self) -> dict[str, TripRecord]:
        return {k: r for k, r in self.rows.items() if r.arrive_time is None}

    def to_csv_bytes(self) -> bytes:
        lines = ["vehicle_id,depart_time,arrive_time,distance"]
        for vid in sorted(self.rows):
            r = self.rows[vid]
            arrive = "" if r.arrive_time is None else repr(float(r.arrive_time))
            lines.append(f"{vid},{repr(float(r.depart_time))},{arrive},{repr(float(r.distance))}")
        return ("\n".join(lines) + "\n").encode()

    def save_csv(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_csv_bytes())

    @staticmethod
    def load_csv(path) -> "TripLog":
        rows = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("vehicle_id"):
                raise ValueError(f"{path}: not a trip log CSV")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                vid, dep, arr, dist = line.split(",")
                rows[vid] = TripRecord(float(dep), float(arr) if arr else None, float(dist))
        return TripLog(rows)


def build_trip_log(network: RoadNetwork, trips, departs: dict, arrivals: dict,
                   enroute: dict) -> TripLog:
    """Assemble the final TripLog from per-worker reports.

    departs/arrivals map vehicle id to times; enroute maps vehicle id to
    (remaining edges including the current one, front position on it).
    Distance is derived from the vehicle's full route, so it never has to be
    carried across partition handovers.
    """
    lengths = {eid: e.length for eid, e in network.edges.items()}
    routes = {v.id: v.route for v in trips.vehicles}
    rows = {}
    for vid, dep in departs.items():
        route = routes[vid]
        if vid in arrivals:
            dist = 0.0
            for e in route:
                dist += lengths[e]
            rows[vid] = TripRecord(dep, arrivals[vid], dist)
        else:
            remaining, pos = enroute[vid]
            done = len(route) - remaining
            dist = 0.0
            for e in route[:done]:
                dist += lengths[e]
            rows[vid] = TripRecord(dep, None, dist + pos)
    return TripLog(rows)


def right_of_way(approaches, green) -> list:
    """Grant junction approaches registered this step.

    approaches: iterable of (edge_id, lane_index, vehicle_id, connection) in
    registration order; green: callable(connection) -> bool (always True for
    unsignalized connections).  Grants follow registration order with ties
    broken by (edge id, lane index); at most one vehicle may cross into each
    receiving lane per step.
    """
    ordered = sorted(approaches, key=lambda a: (a[0], a[1]))
    granted = []
    used = set()
    for app in ordered:
        conn = app[3]
        if not green(conn):
            continue
        dest = (conn.to_edge, conn.to_lane)
        if dest in used:
            continue
        used.add(dest)
        granted.append(app)
    return granted


class Simulation:
    """Simulation state and step loop for one network (or sub-network)."""

    def __init__(self, network: RoadNetwork, config: SimulationConfig,
                 edge_roles: dict[str, int] | None = None, partition_index: int = 0):
        self.network = network
        self.config = config
        self.params = config.params
        self.partition_index = partition_index
        self.edge_roles = edge_roles or {}
        self.clock = 0

        self.lanes: dict[str, list[list[Vehicle]]] = {
            eid: [[] for _ in range(e.lane_count)] for eid, e in network.edges.items()
        }
        self.vehicles: dict[str, Vehicle] = {}
        self._active_edges: set[str] = set()

        self._pending: list = []
        self._pending_idx = 0
        # blocked departures queue FIFO per depart edge; only the head of each
        # queue is retried per step, so a full backlog costs O(edges) not O(n)
        self._blocked: dict[str, list] = {}
        self._blocked_count = 0

        self.departs: dict[str, float] = {}
        self.arrivals: dict[str, float] = {}
        self.inserted_count = 0
        self.arrived_count = 0
        self.authoritative_count = 0
        self.handed_in = 0    # primaries received from peers (border handovers)
        self.handed_out = 0   # vehicles demoted to shadow after handover

        self.vehicle_steps = 0
        self.stopped_vehicle_steps = 0
        self.grouping_seconds = 0.0

        # transitions this step: (vehicle, from_edge or None, to_edge or None);
        # from None = fresh insertion, to None = arrival.  Consumed by sync.
        self.transitions: list = []

        # grouping state: groups are memoized per lane and recomputed only
        # over the position window where anything changed since the last step
        # (movement, entry, removal).  Zone membership is purely positional,
        # so zones outside the window recompute to the identical grouping and
        # their cached groups can be kept; this preserves from-scratch
        # semantics while frozen queue sections cost nothing per step.
        self._lane_groups: dict[tuple[str, int], tuple] = {}
        self._dirty_lanes: dict[tuple[str, int], list] = {}  # key -> [lo, hi] changed positions
        self._group_cache_enabled = True
        self._zones_cache: dict[str, object] = {}
        self._sig_tables: dict[str, list[str] | None] = {}
        self._sig_cache_step = -1
        self._sig_cache: dict[str, str] = {}
        self._edge_prog: dict[str, str | None] = {
            eid: network.junctions[e.to_junction].signal
            if e.to_junction in network.junctions else None
            for eid, e in network.edges.items()
        }
        self._warned_deadlock = False
        self._stalled_steps = 0

    # -- demand ------------------------------------------------------------

    def add_trips(self, specs) -> None:
        self._pending.extend(specs)
        self._pending.sort(key=lambda s: (s.depart_time, s.id))

    # -- signals -----------------------------------------------------------

    def _signal_state(self, prog_id: str) -> str:
        if self._sig_cache_step != self.clock:
            self._sig_cache = {}
            self._sig_cache_step = self.clock
        state = self._sig_cache.get(prog_id)
        if state is None:
            if prog_id not in self._sig_tables:
                # phase sequences repeat; precompute one full cycle of states
                # per step when the cycle is step-aligned
                prog = self.network.signals[prog_id]
                period = prog.cycle_length() / self.config.step_length
                if abs(period - round(period)) < 1e-9:
                    n = int(round(period))
                    self._sig_tables[prog_id] = [
                        prog.state_at(i * self.config.step_length) for i in range(n)
                    ]
                else:
                    self._sig_tables[prog_id] = None
            table = self._sig_tables[prog_id]
            if table is None:
                state = self.network.signals[prog_id].state_at(self.clock * self.config.step_length)
            else:
                state = table[self.clock % len(table)]
            self._sig_cache[prog_id] = state
        return state

    def _is_green(self, conn) -> bool:
        if conn.signal_slot is None:
            return True
        prog_id = self._edge_prog[conn.from_edge]
        if prog_id is None:
            return True
        return self._signal_state(prog_id)[conn.signal_slot] == "G"

    # -- insertion ---------------------------------------------------------

    def _try_insert(self, spec) -> bool:
        edge = self.network.edges.get(spec.route[0])
        if edge is None:
            raise SimulationInvariantError(
                f"vehicle {spec.id}: depart edge {spec.route[0]!r} not in this world"
            )
        conns = self.network.lane_connections[edge.id]
        if len(spec.route) > 1:
            candidates = [li for li in range(edge.lane_count) if spec.route[1] in conns[li]]
            if not candidates:
                candidates = list(range(edge.lane_count))
        else:
            candidates = list(range(edge.lane_count))
        params = self.params
        for li in candidates:
            occ = self.lanes[edge.id][li]
            if occ:
                last = occ[-1]
                gap = (last.pos - params.vehicle_length) - 0.0
                if gap < params.min_gap:
                    continue
                speed0 = min(spec.depart_speed, edge.speed_limit,
                             safe_speed(last.speed, gap - params.min_gap, params))
            else:
                speed0 = min(spec.depart_speed, edge.speed_limit)
            now = self.clock * self.config.step_length
            veh = Vehicle(spec.id, tuple(spec.route), edge.id, li, 0.0, speed0, now)
            occ.append(veh)
            self.vehicles[spec.id] = veh
            self._active_edges.add(edge.id)
            self._dirty_lanes.add((edge.id, li))
            self.departs[spec.id] = now
            self.inserted_count += 1
            self.authoritative_count += 1
            self.transitions.append((veh, None, edge.id))
            return True
        return False

    def _insert_departures(self) -> None:
        now = self.clock * self.config.step_length + 1e-9
        blocked = self._blocked
        for eid in sorted(blocked):
            queue = blocked[eid]
            while queue and self._try_insert(queue[0]):
                queue.pop(0)
                self._blocked_count -= 1
            if not queue:
                del blocked[eid]
        while self._pending_idx < len(self._pending) and \
                self._pending[self._pending_idx].depart_time <= now:
            spec = self._pending[self._pending_idx]
            self._pending_idx += 1
            queue = blocked.get(spec.route[0])
            if queue:  # keep per-edge FIFO depart order
                queue.append(spec)
                self._blocked_count += 1
            elif not self._try_insert(spec):
                blocked.setdefault(spec.route[0], []).append(spec)
                self._blocked_count += 1

    # -- grouping ----------------------------------------------------------

    def _lane_zones_for(self, edge) -> object:
        z = self._zones_cache.get(edge.id)
        if z is None:
            z = lane_zones(edge.length, self.config.grouping)
            self._zones_cache[edge.id] = z
        return z

    def _mark_lane(self, key, lo: float, hi: float) -> None:
        d = self._dirty_lanes.get(key)
        if d is None:
            self._dirty_lanes[key] = [lo, hi]
        else:
            if lo < d[0]:
                d[0] = lo
            if hi > d[1]:
                d[1] = hi

    def _regroup(self, edge_ids) -> None:
        cfg = self.config.grouping
        roles = self.edge_roles
        edges = self.network.edges
        dirty = self._dirty_lanes
        if not self._group_cache_enabled:
            for eid in edge_ids:
                for li in range(edges[eid].lane_count):
                    dirty[(eid, li)] = [0.0, edges[eid].length]
        for key in sorted(dirty):
            eid, li = key
            if roles.get(eid, EDGE_INTERNAL) != EDGE_INTERNAL:
                continue  # grouping is disabled on border edges
            lo, hi = dirty[key]
            edge = edges[eid]
            zones = self._lane_zones_for(edge)
            zlen = zones.body_zone_len
            cached = self._lane_groups.get(key)
            if zlen <= 0.0:
                continue
            top = zones.zone_count - 1
            exit_start = zones.exit_start
            if lo >= exit_start:
                continue  # change wholly inside the exit zone: no body zone affected
            z_lo = 0 if lo <= 0.0 else min(int(lo / zlen), top)
            z_hi = top if hi >= exit_start else min(int(hi / zlen), top)
            keep = []
            if cached is not None:
                for g in cached[1]:
                    if g.zone_index < z_lo or g.zone_index > z_hi:
                        keep.append(g)
                    else:
                        for f in g.followers:
                            f.leader_link = None
            occ = self.lanes[eid][li]
            new = []
            if len(occ) >= 2:
                # slice the affected window from whichever end skips less
                zlo_pos = z_lo * zlen
                zhi_pos = exit_start if z_hi == top else (z_hi + 1) * zlen
                n = len(occ)
                if zlo_pos <= edge.length - zhi_pos:
                    j = n
                    while j > 0 and occ[j - 1].pos < zlo_pos:
                        j -= 1
                    i = j
                    while i > 0 and occ[i - 1].pos < zhi_pos:
                        i -= 1
                else:
                    i = 0
                    while i < n and occ[i].pos >= zhi_pos:
                        i += 1
                    j = i
                    while j < n and occ[j].pos >= zlo_pos:
                        j += 1
                if j > i + 1:
                    new = detect_groups(occ[i:j], edge.speed_limit, zones, cfg)
                    for g in new:
                        lid = g.leader.vid
                        for f in g.followers:
                            f.leader_link = lid
            if keep or new:
                groups = keep + new
                groups.sort(key=lambda g: g.zone_index)
                self._lane_groups[key] = (edge, groups)
            elif cached is not None:
                del self._lane_groups[key]
        self._dirty_lanes = {}

    # -- the step ----------------------------------------------------------

    def step(self) -> None:
        cfg = self.config
        dt = cfg.step_length
        params = self.params
        vlen = params.vehicle_length
        min_gap = params.min_gap
        self.transitions = []

        self._insert_departures()

        edges_today = sorted(self._active_edges)

        grouping_on = cfg.grouping is not None
        if grouping_on:
            t0 = time.perf_counter()
            self._regroup(edges_today)
            self.grouping_seconds += time.perf_counter() - t0

        # plan moves + register junction approaches
        approaches: list = []
        lanes = self.lanes
        edges = self.network.edges
        lane_conns = self.network.lane_connections
        INF = float("inf")
        for eid in edges_today:
            edge = edges[eid]
            L = edge.length
            v_limit = edge.speed_limit
            conns_by_lane = lane_conns[eid]
            for occ in lanes[eid]:
                leader = None
                for v in occ:
                    if v.leader_link is not None:
                        leader = v
                        continue
                    v._cross = None
                    v._granted = False
                    if leader is not None:
                        gap = (leader.pos - vlen) - v.pos
                        eff = gap - min_gap
                        v_safe = safe_speed(leader.speed, eff if eff > 0.0 else 0.0, params)
                    else:
                        v_safe = INF
                    last_edge = v.route_index == len(v.route) - 1
                    if v.role == SHADOW:
                        wall = L - v.pos
                        ws = safe_speed(0.0, wall if wall > 0.0 else 0.0, params)
                        if ws < v_safe:
                            v_safe = ws
                        v._plan = next_speed(v.speed, v_limit, v_safe, params, dt)
                    elif last_edge:
                        v._plan = next_speed(v.speed, v_limit, v_safe, params, dt)
                    else:
                        conn = conns_by_lane[v.lane].get(v.route[v.route_index + 1])
                        blocked = conn is None or not self._is_green(conn)
                        if blocked:
                            wall = L - v.pos
                            ws = safe_speed(0.0, wall if wall > 0.0 else 0.0, params)
                            if ws < v_safe:
                                v_safe = ws
                            v._plan = next_speed(v.speed, v_limit, v_safe, params, dt)
                        else:
                            if leader is None:
                                # lane head: the next leader is the rearmost
                                # vehicle on the connected lane across the junction
                                occ2 = lanes[conn.to_edge][conn.to_lane]
                                if occ2:
                                    l2 = occ2[-1]
                                    gap = (L - v.pos) + (l2.pos - vlen)
                                    eff = gap - min_gap
                                    ws = safe_speed(l2.speed, eff if eff > 0.0 else 0.0, params)
                                    if ws < v_safe:
                                        v_safe = ws
                            v._plan = next_speed(v.speed, v_limit, v_safe, params, dt)
                            if v.pos + v._plan * dt > L:
                                v._cross = conn
                                approaches.append((eid, v.lane, v.vid, conn, v))
                    leader = v

        # right of way
        granted_keys = {
            (a[0], a[1], a[2])
            for a in right_of_way([a[:4] for a in approaches], self._is_green)
        }
        for eid, lane_idx, vid, conn, v in approaches:
            if (eid, lane_idx, vid) in granted_keys:
                v._granted = True

        # execute movement
        arrivals = []
        crossers = []
        moved_any = False
        INF_POS = float("inf")
        for eid in edges_today:
            edge = edges[eid]
            L = edge.length
            for li, occ in enumerate(lanes[eid]):
                removed = None
                lane_lo = INF_POS
                lane_hi = -INF_POS
                for v in occ:
                    if v.leader_link is not None:
                        continue
                    if v._cross is not None and not v._granted:
                        wall = L - v.pos
                        ws = safe_speed(0.0, wall if wall > 0.0 else 0.0, params)
                        v.speed = next_speed(v.speed, edge.speed_limit,
                                             min(v._plan, ws), params, dt)
                    else:
                        v.speed = v._plan
                    if v.speed > 0.0:
                        new_pos = v.pos + v.speed * dt
                        moved_any = True
                        if v.pos < lane_lo:
                            lane_lo = v.pos
                        if new_pos > lane_hi:
                            lane_hi = new_pos
                    else:
                        new_pos = v.pos
                    if v._cross is not None and v._granted and new_pos > L:
                        crossers.append((v, eid, new_pos - L))
                        if removed is None:
                            removed = []
                        removed.append(v)
                    elif v.role != SHADOW and v.route_index == len(v.route) - 1 and new_pos >= L:
                        v.pos = new_pos
                        arrivals.append((v, eid))
                        if removed is None:
                            removed = []
                        removed.append(v)
                    else:
                        if new_pos > L:
                            raise SimulationInvariantError(
                                f"vehicle {v.vid} overran lane end on {eid}"
                            )
                        v.pos = new_pos
                if removed:
                    for v in removed:
                        if v.pos < lane_lo:
                            lane_lo = v.pos
                        occ.remove(v)
                    lane_hi = L
                if lane_hi >= lane_lo:
                    self._mark_lane((eid, li), lane_lo, lane_hi)

        now_end = (self.clock + 1) * dt
        for v, eid in arrivals:
            self.arrivals[v.vid] = now_end
            self.arrived_count += 1
            self.authoritative_count -= 1
            del self.vehicles[v.vid]
            self.transitions.append((v, eid, None))

        for v, from_eid, overshoot in crossers:
            conn = v._cross
            to_edge = edges[conn.to_edge]
            v.route_index += 1
            v.edge = conn.to_edge
            v.lane = conn.to_lane
            v.pos = min(overshoot, to_edge.length)
            if v.role == PRIMARY:
                v.role = NORMAL
            dest = lanes[conn.to_edge][conn.to_lane]
            if dest and dest[-1].pos <= v.pos:
                raise SimulationInvariantError(
                    f"vehicle {v.vid} would overtake into {conn.to_edge}#{conn.to_lane}"
                )
            dest.append(v)
            self._active_edges.add(conn.to_edge)
            dirty.add((conn.to_edge, conn.to_lane))
            self.transitions.append((v, from_eid, conn.to_edge))

        # follower fast path: copy the leader's updated speed
        if grouping_on and self._lane_groups:
            group_keys = sorted(self._lane_groups)
            for key in group_keys:
                edge, gs = self._lane_groups[key]
                for g in gs:
                    leader = g.leader
                    if leader.speed > 0.0:
                        moved_any = True
                        dirty.add(key)
                    follower_update(g, leader.speed, dt)
                    last_route = []
                    for f in g.followers:
                        if f.pos > edge.length:
                            f.pos = edge.length  # leader crossed; follower holds at the line
                        if f.route_index == len(f.route) - 1 and f.pos >= edge.length:
                            last_route.append(f)
                    for f in last_route:
                        g.followers.remove(f)
                        self.lanes[f.edge][f.lane].remove(f)
                        self.arrivals[f.vid] = now_end
                        self.arrived_count += 1
                        self.authoritative_count -= 1
                        del self.vehicles[f.vid]
                        self.transitions.append((f, f.edge, None))

        self._change_lanes(edges_today)

        if grouping_on and self._lane_groups:
            t0 = time.perf_counter()
            for key in sorted(self._lane_groups):
                edge, gs = self._lane_groups[key]
                for g in gs:
                    if g.leader.edge != edge.id or disband_check(
                        g, self._lane_zones_for(edge), edge.speed_limit, cfg.grouping
                    ):
                        dirty.add(key)
                        for f in g.followers:
                            f.leader_link = None
            self.grouping_seconds += time.perf_counter() - t0

        # bookkeeping
        active = len(self.vehicles)
        self.vehicle_steps += active
        if active:
            stopped = 0
            for v in self.vehicles.values():
                if v.speed == 0.0:
                    stopped += 1
            self.stopped_vehicle_steps += stopped
        self.clock += 1

        if self.inserted_count + self.handed_in != \
                self.arrived_count + self.authoritative_count + self.handed_out:
            raise SimulationInvariantError(
                f"conservation violated at step {self.clock}: inserted={self.inserted_count} "
                f"handed_in={self.handed_in} arrived={self.arrived_count} "
                f"en_route={self.authoritative_count} handed_out={self.handed_out}"
            )
        # a sustained full stall (well past any red phase) suggests gridlock;
        # vehicles wait forever rather than teleporting, so warn once
        if not moved_any and self.authoritative_count > 1:
            self._stalled_steps += 1
            if self._stalled_steps >= 150 and not self._warned_deadlock:
                log.warning("possible gridlock at step %d: %d vehicles stopped for %d steps",
                            self.clock, self.authoritative_count, self._stalled_steps)
                self._warned_deadlock = True
        else:
            self._stalled_steps = 0

        for eid in edges_today:
            if not any(self.lanes[eid]):
                self._active_edges.discard(eid)

    # -- lane changes --------------------------------------------------------

    def _change_lanes(self, edges_today) -> None:
        params = self.params
        vlen = params.vehicle_length
        lane_conns = self.network.lane_connections
        changed: set[str] = set()  # at most one lane change per vehicle per step
        for eid in edges_today:
            edge = self.network.edges[eid]
            if edge.lane_count < 2:
                continue
            conns = lane_conns[eid]
            all_lanes = self.lanes[eid]
            for li in range(edge.lane_count):
                for v in list(all_lanes[li]):
                    if v.lane != li or v.role == SHADOW or v.leader_link is not None:
                        continue
                    if v.vid in changed:
                        continue
                    if v.route_index >= len(v.route) - 1:
                        continue
                    nxt = v.route[v.route_index + 1]
                    if nxt in conns[li]:
                        continue
                    candidates = [k for k in range(edge.lane_count) if nxt in conns[k]]
                    if not candidates:
                        continue  # route not drivable from any lane; vehicle waits
                    target = min(candidates, key=lambda k: (abs(k - li), k))
                    step_to = li + 1 if target > li else li - 1
                    direction = "left" if target > li else "right"
                    tctx = self._lane_context(all_lanes[step_to], v.pos, vlen)
                    decision = lane_change_decision(v.speed, LaneContext(), tctx,
                                                    direction, params)
                    if decision == direction:
                        all_lanes[li].remove(v)
                        dest = all_lanes[step_to]
                        idx = 0
                        while idx < len(dest) and dest[idx].pos > v.pos:
                            idx += 1
                        dest.insert(idx, v)
                        v.lane = step_to
                        changed.add(v.vid)
                        self._dirty_lanes.add((eid, li))
                        self._dirty_lanes.add((eid, step_to))

    @staticmethod
    def _lane_context(occ, pos, vlen) -> LaneContext:
        leader = follower = None
        for o in occ:
            if o.pos >= pos:
                leader = o
            else:
                follower = o
                break
        lg = (leader.pos - vlen) - pos if leader is not None else None
        fg = (pos - vlen) - follower.pos if follower is not None else None
        return LaneContext(
            leader_gap=lg,
            leader_speed=leader.speed if leader is not None else 0.0,
            follower_gap=fg,
            follower_speed=follower.speed if follower is not None else 0.0,
        )

    # -- end-of-run reporting ------------------------------------------------

    def enroute_report(self) -> dict[str, tuple[int, float]]:
        """Remaining-route length (incl. current edge) and position for every
        authoritative vehicle still en route."""
        out = {}
        for vid, v in self.vehicles.items():
            if v.role != SHADOW:
                out[vid] = (len(v.route) - v.route_index, v.pos)
        return out

    def check_lane_ordering(self) -> None:
        for eid, lanes in self.lanes.items():
            for li, occ in enumerate(lanes):
                for a, b in zip(occ, occ[1:]):
                    if b.pos > a.pos:
                        raise SimulationInvariantError(
                            f"lane {eid}#{li} out of order: {b.vid} ahead of {a.vid}"
                        )
                    if a.role != SHADOW and b.role != SHADOW and \
                            b.pos > a.pos - self.params.vehicle_length:
                        raise SimulationInvariantError(
                            f"overlap on {eid}#{li}: {a.vid} and {b.vid}"
                        )


def run(network: RoadNetwork, trips, config: SimulationConfig):
    """Sequential run over the whole network; returns (TripLog, RunMetrics)."""
    sim = Simulation(network, config)
    sim.add_trips(trips.sorted())
    t0 = time.perf_counter()
    for _ in range(config.total_steps):
        sim.step()
    wall = time.perf_counter() - t0
    trip_log = build_trip_log(network, trips, sim.departs, sim.arrivals, sim.enroute_report())
    metrics = RunMetrics(
        wall_time=wall,
        steps=config.total_steps,
        vehicle_steps=[sim.vehicle_steps],
        inserted=sim.inserted_count,
        arrived=sim.arrived_count,
        en_route=sim.authoritative_count,
        message_bytes=0,
        comm_seconds=0.0,
        grouping_seconds=sim.grouping_seconds,
        stopped_vehicle_steps=sim.stopped_vehicle_steps,
    )
    return trip_log, metrics
