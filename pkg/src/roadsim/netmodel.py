"""Road-network model: junctions, directed edges with lanes, lane-to-lane
connections and fixed-cycle signal programs, plus text-file I/O and a
synthetic grid generator.

Networks are built mutable, validated once, and treated as immutable
afterwards; they are safe to share across workers.  Junction traversal is
modelled as a zero-length lane-to-lane transfer gated by right-of-way, so
there is no internal-lane geometry.

The file format is a line-oriented UTF-8 text format documented in
docs/formats.md: sections ``[junctions]``, ``[edges]``, ``[connections]``,
``[signals]``, one comma-separated record per line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class NetworkFormatError(Exception):
    """Raised for unparseable or referentially broken network files."""


@dataclass
class Junction:
    id: str
    x: float
    y: float
    signal: str | None = None  # SignalProgram id


@dataclass
class Edge:
    id: str
    from_junction: str
    to_junction: str
    length: float        # metres
    speed_limit: float   # m/s
    lane_count: int


@dataclass(frozen=True)
class Connection:
    from_edge: str
    from_lane: int
    to_edge: str
    to_lane: int
    signal_slot: int | None = None  # index into the phase state string


@dataclass
class SignalProgram:
    id: str
    phases: list[tuple[float, str]]  # (duration seconds, state string of G/r)

    def cycle_length(self) -> float:
        return sum(d for d, _ in self.phases)

    def state_at(self, t: float) -> str:
        """Phase state string at simulation time t; the cycle repeats."""
        t = math.fmod(t, self.cycle_length())
        for duration, state in self.phases:
            if t < duration:
                return state
            t -= duration
        return self.phases[-1][1]


class RoadNetwork:
    """Validated network with derived adjacency indexes.

    ``lane_connections[edge_id][lane]`` maps a next edge id to the Connection
    taking that movement, which is what the simulation engine queries in its
    hot path.
    """

    def __init__(self, junctions, edges, connections, signals):
        self.junctions: dict[str, Junction] = {j.id: j for j in junctions}
        self.edges: dict[str, Edge] = {e.id: e for e in edges}
        self.connections: list[Connection] = list(connections)
        self.signals: dict[str, SignalProgram] = {s.id: s for s in signals}
        if len(self.junctions) != len(list(junctions)):
            raise NetworkFormatError("duplicate junction id")
        if len(self.edges) != len(list(edges)):
            raise NetworkFormatError("duplicate edge id")
        self._build_indexes()

    def _build_indexes(self):
        self.out_edges: dict[str, list[str]] = {j: [] for j in self.junctions}
        self.in_edges: dict[str, list[str]] = {j: [] for j in self.junctions}
        for e in self.edges.values():
            if e.from_junction in self.out_edges:
                self.out_edges[e.from_junction].append(e.id)
            if e.to_junction in self.in_edges:
                self.in_edges[e.to_junction].append(e.id)
        for lst in self.out_edges.values():
            lst.sort()
        for lst in self.in_edges.values():
            lst.sort()
        # edge id -> lane -> {next edge id: Connection}
        self.lane_connections: dict[str, list[dict[str, Connection]]] = {
            e.id: [dict() for _ in range(e.lane_count)] for e in self.edges.values()
        }
        # edge id -> set of successor edge ids reachable from any lane
        self.edge_successors: dict[str, set[str]] = {e: set() for e in self.edges}
        for c in self.connections:
            if c.from_edge in self.lane_connections and 0 <= c.from_lane < len(
                self.lane_connections[c.from_edge]
            ):
                self.lane_connections[c.from_edge][c.from_lane][c.to_edge] = c
                self.edge_successors[c.from_edge].add(c.to_edge)

    def validate(self) -> list[str]:
        """Return all invariant violations (empty list means valid)."""
        problems = []
        for e in self.edges.values():
            if e.length <= 0:
                problems.append(f"edge {e.id}: non-positive length {e.length}")
            if e.speed_limit <= 0:
                problems.append(f"edge {e.id}: non-positive speed limit {e.speed_limit}")
            if e.lane_count < 1:
                problems.append(f"edge {e.id}: lane count {e.lane_count} < 1")
            if e.from_junction not in self.junctions:
                problems.append(f"edge {e.id}: unknown junction {e.from_junction!r}")
            if e.to_junction not in self.junctions:
                problems.append(f"edge {e.id}: unknown junction {e.to_junction!r}")
        for j in self.junctions.values():
            if not self.out_edges.get(j.id) and not self.in_edges.get(j.id):
                problems.append(f"junction {j.id}: no incident edge")
            if j.signal is not None and j.signal not in self.signals:
                problems.append(f"junction {j.id}: unknown signal {j.signal!r}")
        for c in self.connections:
            fe = self.edges.get(c.from_edge)
            te = self.edges.get(c.to_edge)
            if fe is None:
                problems.append(f"connection: unknown edge {c.from_edge!r}")
                continue
            if te is None:
                problems.append(f"connection: unknown edge {c.to_edge!r}")
                continue
            if not (0 <= c.from_lane < fe.lane_count):
                problems.append(f"connection {c.from_edge}->{c.to_edge}: bad lane {c.from_lane}")
            if not (0 <= c.to_lane < te.lane_count):
                problems.append(f"connection {c.from_edge}->{c.to_edge}: bad lane {c.to_lane}")
            if te.from_junction != fe.to_junction:
                problems.append(
                    f"connection {c.from_edge}->{c.to_edge}: edges do not meet at a junction"
                )
            if c.signal_slot is not None:
                j = self.junctions.get(fe.to_junction)
                prog = self.signals.get(j.signal) if (j and j.signal) else None
                if prog is None:
                    problems.append(
                        f"connection {c.from_edge}->{c.to_edge}: signal slot at unsignalized junction"
                    )
                else:
                    for _, state in prog.phases:
                        if c.signal_slot >= len(state):
                            problems.append(
                                f"connection {c.from_edge}->{c.to_edge}: slot {c.signal_slot} "
                                f"missing from a phase of {prog.id}"
                            )
                            break
        for s in self.signals.values():
            if not s.phases:
                problems.append(f"signal {s.id}: no phases")
            for d, state in s.phases:
                if d <= 0:
                    problems.append(f"signal {s.id}: non-positive phase duration {d}")
                if set(state) - {"G", "r"}:
                    problems.append(f"signal {s.id}: bad state characters in {state!r}")
        return problems

    def structurally_equal(self, other: "RoadNetwork") -> bool:
        return (
            {j.id: (j.x, j.y, j.signal) for j in self.junctions.values()}
            == {j.id: (j.x, j.y, j.signal) for j in other.junctions.values()}
            and {
                e.id: (e.from_junction, e.to_junction, e.length, e.speed_limit, e.lane_count)
                for e in self.edges.values()
            }
            == {
                e.id: (e.from_junction, e.to_junction, e.length, e.speed_limit, e.lane_count)
                for e in other.edges.values()
            }
            and sorted(self.connections, key=_conn_key) == sorted(other.connections, key=_conn_key)
            and {s.id: s.phases for s in self.signals.values()}
            == {s.id: s.phases for s in other.signals.values()}
        )


def _conn_key(c: Connection):
    return (c.from_edge, c.from_lane, c.to_edge, c.to_lane)


def validate(network: RoadNetwork) -> list[str]:
    return network.validate()


# ---------------------------------------------------------------------------
# file I/O


def _fmt_float(x: float) -> str:
    return repr(float(x))


def save_network(network: RoadNetwork, path) -> None:
    lines = ["[junctions]"]
    for j in sorted(network.junctions.values(), key=lambda j: j.id):
        lines.append(f"{j.id},{_fmt_float(j.x)},{_fmt_float(j.y)},{j.signal or ''}")
    lines.append("[edges]")
    for e in sorted(network.edges.values(), key=lambda e: e.id):
        lines.append(
            f"{e.id},{e.from_junction},{e.to_junction},"
            f"{_fmt_float(e.length)},{_fmt_float(e.speed_limit)},{e.lane_count}"
        )
    lines.append("[connections]")
    for c in sorted(network.connections, key=_conn_key):
        slot = "" if c.signal_slot is None else str(c.signal_slot)
        lines.append(f"{c.from_edge},{c.from_lane},{c.to_edge},{c.to_lane},{slot}")
    lines.append("[signals]")
    for s in sorted(network.signals.values(), key=lambda s: s.id):
        phases = ",".join(f"{_fmt_float(d)}:{state}" for d, state in s.phases)
        lines.append(f"{s.id},{phases}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path) -> RoadNetwork:
    """Parse and validate a network file; see docs/formats.md for the grammar."""
    junctions, edges, connections, signals = [], [], [], []
    section = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                if section not in ("junctions", "edges", "connections", "signals"):
                    raise NetworkFormatError(f"{path}:{lineno}: unknown section {section!r}")
                continue
            if section is None:
                raise NetworkFormatError(f"{path}:{lineno}: record before any section header")
            fields = line.split(",")
            try:
                if section == "junctions":
                    jid, x, y = fields[0], float(fields[1]), float(fields[2])
                    sig = fields[3] if len(fields) > 3 and fields[3] else None
                    junctions.append(Junction(jid, x, y, sig))
                elif section == "edges":
                    edges.append(
                        Edge(fields[0], fields[1], fields[2],
                             float(fields[3]), float(fields[4]), int(fields[5]))
                    )
                elif section == "connections":
                    slot = int(fields[4]) if len(fields) > 4 and fields[4] else None
                    connections.append(
                        Connection(fields[0], int(fields[1]), fields[2], int(fields[3]), slot)
                    )
                elif section == "signals":
                    phases = []
                    for token in fields[1:]:
                        dur, state = token.split(":")
                        phases.append((float(dur), state))
                    signals.append(SignalProgram(fields[0], phases))
            except (ValueError, IndexError) as exc:
                raise NetworkFormatError(f"{path}:{lineno}: bad record {line!r}: {exc}") from exc
    net = RoadNetwork(junctions, edges, connections, signals)
    problems = net.validate()
    if problems:
        raise NetworkFormatError(f"{path}: invalid network: " + "; ".join(problems[:5]))
    return net


# ---------------------------------------------------------------------------
# synthetic grids


def _grid_junction_id(col: int, row: int) -> str:
    return f"j{col:03d}_{row:03d}"


def _edge_id(from_j: str, to_j: str) -> str:
    return f"{from_j}>{to_j}"


def generate_grid(
    cols: int,
    rows: int,
    h_len: float = 100.0,
    v_len: float = 100.0,
    lanes_per_edge: int = 1,
    speed_limit: float = 13.89,
    signalized: bool = True,
) -> RoadNetwork:
    """Rectangular grid: a junction at every (col, row), two directed edges
    between each 4-neighbour pair, horizontal edges of length h_len and
    vertical edges of length v_len.

    Connections: straight movements from every lane (same lane index), right
    turns from lane 0 only, left turns from the leftmost lane only; U-turns
    are not generated.  If signalized, every junction with at least two
    incoming edges gets a two-phase program: 30 s green for vertical
    approaches, then 30 s green for horizontal ones.
    """
    if cols < 2 and rows < 2:
        raise ValueError("grid needs at least 2 columns or 2 rows")
    if cols < 1 or rows < 1:
        raise ValueError("grid dimensions must be positive")
    if h_len <= 0 or v_len <= 0 or speed_limit <= 0:
        raise ValueError("lengths and speed limit must be positive")
    if lanes_per_edge < 1:
        raise ValueError("lanes_per_edge must be >= 1")

    junctions = [
        Junction(_grid_junction_id(c, r), c * h_len, r * v_len)
        for c in range(cols)
        for r in range(rows)
    ]
    edges = []
    for c in range(cols):
        for r in range(rows):
            here = _grid_junction_id(c, r)
            if c + 1 < cols:
                neigh = _grid_junction_id(c + 1, r)
                edges.append(Edge(_edge_id(here, neigh), here, neigh, h_len, speed_limit, lanes_per_edge))
                edges.append(Edge(_edge_id(neigh, here), neigh, here, h_len, speed_limit, lanes_per_edge))
            if r + 1 < rows:
                neigh = _grid_junction_id(c, r + 1)
                edges.append(Edge(_edge_id(here, neigh), here, neigh, v_len, speed_limit, lanes_per_edge))
                edges.append(Edge(_edge_id(neigh, here), neigh, here, v_len, speed_limit, lanes_per_edge))

    net_tmp = RoadNetwork(junctions, edges, [], [])
    coords = {j.id: (j.x, j.y) for j in junctions}

    def heading(e: Edge):
        fx, fy = coords[e.from_junction]
        tx, ty = coords[e.to_junction]
        return (tx - fx, ty - fy)

    connections = []
    signals = []
    edge_by_id = {e.id: e for e in edges}
    for j in junctions:
        incoming = net_tmp.in_edges[j.id]
        outgoing = net_tmp.out_edges[j.id]
        signalize_here = signalized and len(incoming) >= 2
        slots: list[Connection] = []
        for ein_id in incoming:
            ein = edge_by_id[ein_id]
            hx, hy = heading(ein)
            for eout_id in outgoing:
                eout = edge_by_id[eout_id]
                ox, oy = heading(eout)
                dot = hx * ox + hy * oy
                cross = hx * oy - hy * ox
                if dot < 0 and abs(cross) < 1e-9:
                    continue  # U-turn
                if abs(cross) < 1e-9:
                    lanes = range(ein.lane_count)  # straight: every lane
                elif cross > 0:
                    lanes = [ein.lane_count - 1]   # left turn: leftmost lane
                else:
                    lanes = [0]                    # right turn: rightmost lane
                for li in lanes:
                    to_lane = min(li, eout.lane_count - 1)
                    slot = len(slots) if signalize_here else None
                    conn = Connection(ein.id, li, eout.id, to_lane, slot)
                    connections.append(conn)
                    if signalize_here:
                        slots.append(conn)
        if signalize_here and slots:
            sig_id = f"sig_{j.id}"
            ns_state = "".join(
                "G" if abs(heading(edge_by_id[c.from_edge])[1]) > abs(heading(edge_by_id[c.from_edge])[0]) else "r"
                for c in slots
            )
            ew_state = "".join("r" if ch == "G" else "G" for ch in ns_state)
            signals.append(SignalProgram(sig_id, [(30.0, ns_state), (30.0, ew_state)]))
            j.signal = sig_id

    net = RoadNetwork(junctions, edges, connections, signals)
    problems = net.validate()
    if problems:
        raise AssertionError("generated grid failed validation: " + "; ".join(problems[:3]))
    return net
