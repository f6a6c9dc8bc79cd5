"""Trip demand: vehicle specs, deterministic random trip generation and
static shortest-path routing over free-flow travel times.

Routing minimises the sum of length/speed_limit over the edges of the route
(both endpoints included).  Ties are broken towards the lexicographically
smallest edge-id sequence, which keeps routes reproducible across runs and
implementations.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .netmodel import RoadNetwork
from .rng import Xorshift64Star


class RoutingError(Exception):
    """Destination unreachable, or demand generation impossible."""


@dataclass
class VehicleSpec:
    id: str
    depart_time: float
    route: tuple[str, ...]       # ordered edge ids, origin first
    depart_speed: float = 0.0


@dataclass
class TripTable:
    vehicles: list[VehicleSpec] = field(default_factory=list)

    def sorted(self) -> list[VehicleSpec]:
        return sorted(self.vehicles, key=lambda v: (v.depart_time, v.id))

    def total_route_edges(self) -> int:
        return sum(len(v.route) for v in self.vehicles)


def _edge_cost(network: RoadNetwork, edge_id: str) -> float:
    e = network.edges[edge_id]
    return e.length / e.speed_limit


def shortest_route(network: RoadNetwork, origin_edge: str, dest_edge: str) -> list[str]:
    """Minimum free-flow-time edge sequence from origin_edge to dest_edge.

    Among all minimum-cost routes, returns the lexicographically smallest
    edge-id sequence.  Raises RoutingError if dest is unreachable.
    """
    if origin_edge not in network.edges:
        raise RoutingError(f"unknown origin edge {origin_edge!r}")
    if dest_edge not in network.edges:
        raise RoutingError(f"unknown destination edge {dest_edge!r}")
    if origin_edge == dest_edge:
        return [origin_edge]

    succ = network.edge_successors
    dist = _dijkstra(network, origin_edge, succ)
    if dest_edge not in dist:
        raise RoutingError(f"{dest_edge!r} not reachable from {origin_edge!r}")

    # Backward distances on the reversed successor graph, then walk the
    # tight-edge DAG greedily by edge id; that yields exactly the
    # lexicographically smallest minimum-cost route.
    pred: dict[str, list[str]] = {e: [] for e in network.edges}
    for a, bs in succ.items():
        for b in bs:
            pred[b].append(a)
    back = _dijkstra(network, dest_edge, pred)

    total = dist[dest_edge]
    tol = 1e-9 * (1.0 + abs(total))
    route = [origin_edge]
    here = origin_edge
    while here != dest_edge:
        nxt = None
        for cand in sorted(succ[here]):
            # cand continues an optimal route iff dist[here] + back[cand] == total
            if cand in back and abs(dist[here] + back[cand] - total) <= tol:
                nxt = cand
                break
        if nxt is None or len(route) > len(network.edges):
            raise RoutingError("optimal-route reconstruction failed")  # numeric safety net
        route.append(nxt)
        here = nxt
    return route


def _dijkstra(network: RoadNetwork, start: str, succ) -> dict[str, float]:
    dist = {start: _edge_cost(network, start)}
    heap = [(dist[start], start)]
    done = set()
    while heap:
        d, e = heapq.heappop(heap)
        if e in done:
            continue
        done.add(e)
        for n in succ[e]:
            nd = d + _edge_cost(network, n)
            if nd < dist.get(n, float("inf")) - 1e-12:
                dist[n] = nd
                heapq.heappush(heap, (nd, n))
    return dist


def generate_random_trips(
    network: RoadNetwork,
    rate: float,
    duration: float,
    seed: int,
    max_od_retries: int = 100,
) -> TripTable:
    """floor(rate * duration) vehicles with evenly spaced departures
    (depart_i = i / rate) and origin/destination edges drawn uniformly from
    the network, rejecting unreachable pairs up to max_od_retries times each.

    Pure function of its arguments: same inputs give identical tables.
    """
    if rate <= 0 or duration <= 0:
        raise ValueError("rate and duration must be positive")
    edge_ids = sorted(network.edges)
    if len(edge_ids) < 2:
        raise ValueError("need at least 2 edges to generate trips")

    rng = Xorshift64Star(seed)
    count = int(rate * duration)
    pad = max(4, len(str(max(count - 1, 0))))
    vehicles = []
    for i in range(count):
        route = None
        for _ in range(max_od_retries):
            origin = edge_ids[rng.randrange(len(edge_ids))]
            dest = edge_ids[rng.randrange(len(edge_ids))]
            if origin == dest:
                continue
            try:
                route = shortest_route(network, origin, dest)
                break
            except RoutingError:
                continue
        if route is None:
            raise RoutingError(
                f"no reachable OD pair found after {max_od_retries} attempts"
            )
        vehicles.append(VehicleSpec(f"v{i:0{pad}d}", i / rate, tuple(route)))
    return TripTable(vehicles)


# ---------------------------------------------------------------------------
# trip file I/O (see docs/formats.md)


def save_trips(table: TripTable, path) -> None:
    lines = ["[vehicles]"]
    for v in table.sorted():
        rec = f"{v.id},{repr(float(v.depart_time))},{' '.join(v.route)}"
        if v.depart_speed:
            rec += f",{repr(float(v.depart_speed))}"
        lines.append(rec)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trips(path, network: RoadNetwork | None = None) -> TripTable:
    vehicles = []
    section = None
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                if section != "vehicles":
                    raise ValueError(f"{path}:{lineno}: unknown section {section!r}")
                continue
            if section != "vehicles":
                raise ValueError(f"{path}:{lineno}: record before [vehicles]")
            fields = line.split(",")
            vid, depart = fields[0], float(fields[1])
            route = tuple(fields[2].split())
            speed = float(fields[3]) if len(fields) > 3 else 0.0
            if vid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate vehicle id {vid!r}")
            if not route:
                raise ValueError(f"{path}:{lineno}: empty route for {vid!r}")
            seen.add(vid)
            vehicles.append(VehicleSpec(vid, depart, route, speed))
    table = TripTable(vehicles)
    if network is not None:
        problems = validate_trips(table, network)
        if problems:
            raise ValueError(f"{path}: " + "; ".join(problems[:5]))
    return table


def validate_trips(table: TripTable, network: RoadNetwork) -> list[str]:
    problems = []
    for v in table.vehicles:
        if v.depart_time < 0:
            problems.append(f"{v.id}: negative depart time")
        for e in v.route:
            if e not in network.edges:
                problems.append(f"{v.id}: unknown edge {e!r} in route")
                break
        else:
            for a, b in zip(v.route, v.route[1:]):
                if b not in network.edge_successors.get(a, ()):
                    problems.append(f"{v.id}: no connection {a} -> {b}")
                    break
    return problems
