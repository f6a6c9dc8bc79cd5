"""Traffic-aware network partitioning.

Vertex weights: every junction gets the sum of access_count * length over all
its incident edges (both directions), plus the average of those sums over all
junctions as a base weight so junctions without expected traffic still
participate in balancing.

The partitioner grows k weight-balanced BFS regions from deterministically
chosen seeds and then refines the boundary with move sequences in the
Kernighan-Lin style (hill-climbing with rollback to the best prefix), keeping
every partition under (1 + epsilon) times the mean weight.  The cut objective
counts each undirected border adjacency once.  Assignments from external
partitioning tools can be loaded from a text file instead.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .engine import EDGE_INTERNAL, EDGE_PRIMARY, EDGE_SHADOW
from .netmodel import RoadNetwork
from .rng import Xorshift64Star


@dataclass
class TrafficProfile:
    access_counts: dict[str, int] = field(default_factory=dict)  # edge id -> C_e


@dataclass
class VertexWeights:
    raw: dict[str, float]    # junction id -> incident sum of C_e * L_e
    final: dict[str, float]  # raw + mean(raw over all junctions)


@dataclass
class PartitionAssignment:
    parts: dict[str, int]    # junction id -> partition index
    k: int
    balanced: bool = True    # False when the balance bound was infeasible

    def __eq__(self, other):
        return (isinstance(other, PartitionAssignment)
                and self.parts == other.parts and self.k == other.k)


def edge_access_counts(trips, network: RoadNetwork) -> TrafficProfile:
    counts = {eid: 0 for eid in network.edges}
    for v in trips.vehicles:
        for e in v.route:
            if e not in counts:
                raise KeyError(f"route of {v.id} uses unknown edge {e!r}")
            counts[e] += 1
    return TrafficProfile(counts)


def vertex_weights(network: RoadNetwork, profile: TrafficProfile) -> VertexWeights:
    counts = profile.access_counts
    raw = {}
    for jid in network.junctions:
        s = 0.0
        for eid in network.out_edges[jid]:
            s += counts.get(eid, 0) * network.edges[eid].length
        for eid in network.in_edges[jid]:
            s += counts.get(eid, 0) * network.edges[eid].length
        raw[jid] = s
    mean = sum(raw.values()) / len(raw) if raw else 0.0
    return VertexWeights(raw, {j: mean + w for j, w in raw.items()})


def _undirected_adjacency(network: RoadNetwork) -> dict[str, list[str]]:
    nbrs: dict[str, set] = {j: set() for j in network.junctions}
    for e in network.edges.values():
        if e.from_junction != e.to_junction:
            nbrs[e.from_junction].add(e.to_junction)
            nbrs[e.to_junction].add(e.from_junction)
    return {j: sorted(s) for j, s in nbrs.items()}


def cut_size(network: RoadNetwork, assignment: PartitionAssignment) -> int:
    """Number of undirected adjacencies whose endpoints are split."""
    parts = assignment.parts
    cut = 0
    seen = set()
    for e in network.edges.values():
        key = tuple(sorted((e.from_junction, e.to_junction)))
        if key in seen or e.from_junction == e.to_junction:
            continue
        seen.add(key)
        if parts[e.from_junction] != parts[e.to_junction]:
            cut += 1
    return cut


def border_edge_ratio(network: RoadNetwork, assignment: PartitionAssignment) -> float:
    """Fraction of directed edges whose endpoints are in different partitions."""
    parts = assignment.parts
    border = sum(
        1 for e in network.edges.values() if parts[e.from_junction] != parts[e.to_junction]
    )
    return border / len(network.edges)


def partition(
    network: RoadNetwork,
    weights: VertexWeights,
    k: int,
    seed: int = 0,
    epsilon: float = 0.05,
    refine_passes: int = 12,
    restarts: int = 3,
) -> PartitionAssignment:
    """Deterministic balanced min-cut assignment of junctions to k partitions.

    Runs `restarts` seeded attempts (different seed vertices) and keeps the
    assignment with the smallest cut.  If all junction weights are zero the
    partitioner balances by junction count instead.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    junctions = sorted(network.junctions)
    if k > len(junctions):
        raise ValueError("k exceeds junction count")
    if k == 1:
        return PartitionAssignment({j: 0 for j in junctions}, 1)

    w = dict(weights.final)
    if sum(w.values()) == 0.0:
        w = {j: 1.0 for j in junctions}

    nbrs = _undirected_adjacency(network)
    best = None
    for attempt in range(max(1, restarts)):
        rng = Xorshift64Star(seed * 1_000_003 + attempt)
        parts, _ = _grow_regions(junctions, nbrs, w, k, rng, epsilon)
        _repair_balance(parts, nbrs, w, k, epsilon)
        _refine(parts, nbrs, w, k, epsilon, refine_passes)
        ratio = _max_over_mean(parts, w, k)
        balanced = ratio <= 1 + epsilon + 1e-9
        asg = PartitionAssignment(dict(parts), k, balanced)
        score = (0 if balanced else 1, cut_size(network, asg), ratio)
        if best is None or score < best[0]:
            best = (score, asg)
    return best[1]


def _max_over_mean(parts, w, k) -> float:
    totals = [0.0] * k
    for j, p in parts.items():
        totals[p] += w[j]
    mean = sum(totals) / k
    return max(totals) / mean if mean > 0 else 1.0


def _grow_regions(junctions, nbrs, w, k, rng, epsilon):
    # farthest-point seeding from a random start
    seeds = [junctions[rng.randrange(len(junctions))]]
    while len(seeds) < k:
        dist = {s: 0 for s in seeds}
        frontier = list(seeds)
        while frontier:
            nxt = []
            for j in frontier:
                for n in nbrs[j]:
                    if n not in dist:
                        dist[n] = dist[j] + 1
                        nxt.append(n)
            frontier = nxt
        candidates = [j for j in junctions if j not in dist] or junctions
        far = max(candidates, key=lambda j: (dist.get(j, 1 << 30), j))
        if far in seeds:  # graph smaller than k connected pieces remain
            far = next(j for j in junctions if j not in seeds)
        seeds.append(far)

    parts: dict[str, int] = {}
    totals = [0.0] * k
    frontiers: list[list] = [[] for _ in range(k)]
    order = 0
    for p, s in enumerate(seeds):
        heapq.heappush(frontiers[p], (0, s))
        parts[s] = p
        totals[p] += w[s]
    # claim vertices breadth-first, always extending the lightest region
    live = set(range(k))
    while live:
        p = min(live, key=lambda q: (totals[q], q))
        grew = False
        while frontiers[p]:
            layer, j = heapq.heappop(frontiers[p])
            for n in nbrs[j]:
                if n not in parts:
                    parts[n] = p
                    totals[p] += w[n]
                    heapq.heappush(frontiers[p], (layer + 1, n))
                    grew = True
                    break
            else:
                continue
            heapq.heappush(frontiers[p], (layer, j))
            break
        if not grew and not frontiers[p]:
            live.discard(p)
        order += 1

    # disconnected leftovers go to the lightest partition, component by component
    remaining = [j for j in junctions if j not in parts]
    remaining_set = set(remaining)
    while remaining:
        start = remaining[0]
        comp = [start]
        seen = {start}
        i = 0
        while i < len(comp):
            for n in nbrs[comp[i]]:
                if n not in seen and n in remaining_set:
                    seen.add(n)
                    comp.append(n)
            i += 1
        p = min(range(k), key=lambda q: (totals[q], q))
        for j in comp:
            parts[j] = p
            totals[p] += w[j]
        remaining_set -= seen
        remaining = [j for j in remaining if j not in seen]

    mean = sum(totals) / k
    balanced = max(totals) <= (1 + epsilon) * mean + 1e-9
    return parts, balanced


def _part_sizes(parts, k):
    sizes = [0] * k
    for p in parts.values():
        sizes[p] += 1
    return sizes


def _repair_balance(parts, nbrs, w, k, epsilon) -> bool:
    """Level partition weights by pushing boundary vertices from the heaviest
    partition towards the lightest along a shortest path in the partition
    adjacency graph (multi-hop pushes escape plateaus where every neighbour of
    the heaviest partition is itself nearly as heavy).  Stops when every
    partition is under (1 + epsilon) * mean or no path makes progress."""
    totals = [0.0] * k
    members: list[set] = [set() for _ in range(k)]
    for j, p in parts.items():
        totals[p] += w[j]
        members[p].add(j)
    mean = sum(totals) / k
    cap = (1 + epsilon) * mean
    max_iters = 8 * len(parts)
    for _ in range(max_iters):
        heavy = min(range(k), key=lambda p: (-totals[p], p))
        if totals[heavy] <= cap + 1e-9:
            return True
        light = min(range(k), key=lambda p: (totals[p], p))
        if heavy == light:
            return False
        # partition adjacency graph
        padj: list[set] = [set() for _ in range(k)]
        for j, p in parts.items():
            for n in nbrs[j]:
                q = parts[n]
                if q != p:
                    padj[p].add(q)
        prev = {heavy: None}
        queue = [heavy]
        while queue and light not in prev:
            nxt = []
            for a in queue:
                for b in sorted(padj[a]):
                    if b not in prev:
                        prev[b] = a
                        nxt.append(b)
            queue = nxt
        if light not in prev:
            return False
        path = [light]
        while path[-1] != heavy:
            path.append(prev[path[-1]])
        path.reverse()
        # push one vertex across every hop of the path
        moved = False
        for a, b in zip(path, path[1:]):
            if len(members[a]) <= 1:
                break
            best = None
            for j in sorted(members[a]):
                cnt_b = 0
                cnt_a = 0
                for n in nbrs[j]:
                    q = parts[n]
                    if q == b:
                        cnt_b += 1
                    elif q == a:
                        cnt_a += 1
                if cnt_b == 0:
                    continue
                key = (cnt_a - cnt_b, j)
                if best is None or key < best[0]:
                    best = (key, j)
            if best is None:
                break
            j = best[1]
            parts[j] = b
            members[a].discard(j)
            members[b].add(j)
            totals[a] -= w[j]
            totals[b] += w[j]
            moved = True
        if not moved:
            return False
    return max(totals) <= cap + 1e-9


def _refine(parts, nbrs, w, k, epsilon, passes) -> None:
    """Kernighan-Lin style passes: repeatedly apply the best boundary move
    (temporary losses allowed), then roll back to the best prefix.  A lazy
    max-heap holds candidate moves; stale entries are re-validated on pop."""
    totals = [0.0] * k
    for j, p in parts.items():
        totals[p] += w[j]
    mean = sum(totals) / k
    cap = (1 + epsilon) * mean
    sizes = _part_sizes(parts, k)

    for _ in range(passes):
        heap: list = []

        def push_moves(j):
            p = parts[j]
            same = 0
            other: dict[int, int] = {}
            for n in nbrs[j]:
                q = parts[n]
                if q == p:
                    same += 1
                else:
                    other[q] = other.get(q, 0) + 1
            for q in sorted(other):
                heapq.heappush(heap, (same - other[q], j, q))

        for j in sorted(parts):
            push_moves(j)

        locked = set()
        trail = []          # (junction, from, to)
        cumulative = 0
        best_gain = 0
        best_len = 0
        limit = 4 * max(64, len(heap))
        while heap and len(trail) < limit:
            neg_gain, j, q = heapq.heappop(heap)
            if j in locked or parts[j] == q:
                continue
            p = parts[j]
            same = 0
            cnt = 0
            for n in nbrs[j]:
                pn = parts[n]
                if pn == p:
                    same += 1
                elif pn == q:
                    cnt += 1
            if cnt == 0:
                continue
            gain = cnt - same
            if -neg_gain != gain:
                heapq.heappush(heap, (-gain, j, q))  # stale priority, requeue
                continue
            if totals[q] + w[j] > cap + 1e-9 or sizes[p] <= 1:
                continue
            parts[j] = q
            totals[p] -= w[j]
            totals[q] += w[j]
            sizes[p] -= 1
            sizes[q] += 1
            locked.add(j)
            trail.append((j, p, q))
            cumulative += gain
            if cumulative > best_gain:
                best_gain = cumulative
                best_len = len(trail)
            for n in nbrs[j]:
                if n not in locked:
                    push_moves(n)
        # roll back to the best prefix
        for j, p, q in reversed(trail[best_len:]):
            parts[j] = p
            totals[q] -= w[j]
            totals[p] += w[j]
            sizes[q] -= 1
            sizes[p] += 1
        if best_gain <= 0:
            break


# ---------------------------------------------------------------------------
# assignment file I/O (see docs/formats.md)


def save_assignment(assignment: PartitionAssignment, path) -> None:
    lines = ["[assignment]", f"k,{assignment.k}"]
    for j in sorted(assignment.parts):
        lines.append(f"{j},{assignment.parts[j]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_assignment(path, network: RoadNetwork | None = None) -> PartitionAssignment:
    parts = {}
    k = None
    section = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                if section != "assignment":
                    raise ValueError(f"{path}:{lineno}: unknown section {section!r}")
                continue
            if section != "assignment":
                raise ValueError(f"{path}:{lineno}: record before [assignment]")
            key, value = line.split(",")
            if key == "k" and k is None:
                k = int(value)
                continue
            parts[key] = int(value)
    if k is None:
        k = max(parts.values()) + 1 if parts else 1
    for j, p in parts.items():
        if not (0 <= p < k):
            raise ValueError(f"{path}: junction {j} has partition index {p} >= k={k}")
        if network is not None and j not in network.junctions:
            raise ValueError(f"{path}: unknown junction {j!r}")
    if network is not None:
        missing = set(network.junctions) - set(parts)
        if missing:
            raise ValueError(f"{path}: no assignment for {sorted(missing)[:3]}...")
    return PartitionAssignment(parts, k)


# ---------------------------------------------------------------------------
# materialization


@dataclass
class PartitionedWorld:
    index: int
    network: RoadNetwork                  # this partition's sub-network
    edge_roles: dict[str, int]            # EDGE_INTERNAL / EDGE_PRIMARY / EDGE_SHADOW
    border_peer: dict[str, int]           # border edge id -> opposite partition index
    shadow_junctions: set[str] = field(default_factory=set)


def materialize(network: RoadNetwork, assignment: PartitionAssignment) -> list[PartitionedWorld]:
    """Build one sub-network per partition.

    A directed border edge u->v is replicated on both sides: the copy in v's
    partition is the primary edge (that side owns all of v's incident edges
    and so has the information that dictates the vehicle's movement), the
    copy in u's partition is the shadow edge.  The junctions of a border edge
    are replicated as shadow junctions on the foreign side.  Internal edges
    and junctions appear exactly once.
    """
    parts = assignment.parts
    k = assignment.k
    worlds = []
    for p in range(k):
        edge_roles: dict[str, int] = {}
        border_peer: dict[str, int] = {}
        edges = []
        junction_ids: set[str] = {j for j, q in parts.items() if q == p}
        shadow_junctions: set[str] = set()
        for e in network.edges.values():
            pf, pt = parts[e.from_junction], parts[e.to_junction]
            if pf == p and pt == p:
                edges.append(e)
                edge_roles[e.id] = EDGE_INTERNAL
            elif pt == p:
                edges.append(e)
                edge_roles[e.id] = EDGE_PRIMARY
                border_peer[e.id] = pf
                shadow_junctions.add(e.from_junction)
            elif pf == p:
                edges.append(e)
                edge_roles[e.id] = EDGE_SHADOW
                border_peer[e.id] = pt
                shadow_junctions.add(e.to_junction)
        junction_ids |= shadow_junctions
        junctions = [network.junctions[j] for j in sorted(junction_ids)]
        edge_ids = {e.id for e in edges}
        connections = [
            c for c in network.connections
            if c.from_edge in edge_ids and c.to_edge in edge_ids
        ]
        signals = [
            network.signals[j.signal] for j in junctions
            if j.signal is not None and j.signal in network.signals
        ]
        sub = RoadNetwork(junctions, edges, connections, signals)
        worlds.append(PartitionedWorld(p, sub, edge_roles, border_peer, shadow_junctions))
    return worlds
