"""Border-edge synchronization protocol and lockstep parallel orchestration.

At the end of every timestep each worker collects, per peer partition, one
RoundBatch of records about vehicles on border edges:

  Insert  a vehicle entered one of our shadow edges this step (including
          fresh departures on them); the primary side must create the
          authoritative copy, and our local copy is demoted to a shadow.
  Update  for every primary vehicle on one of our primary border edges,
          the post-step position/speed/lane, overwriting the shadow copy
          on the source side so its followers keep reacting correctly.
  Remove  a primary vehicle left one of our primary border edges (moved to
          a local edge, or arrived); the shadow copy must be deleted.

Workers run in lockstep: all batches for step t are exchanged and applied
before any worker begins step t+1.  Within a round, Removes are applied
before Inserts before Updates (then by vehicle id), which also resolves the
corner case of a vehicle leaving a border edge and immediately re-entering
the same source partition through another border edge in one round.

Two transports ship: an in-process loopback (default; single-threaded,
fully inspectable by tests) and a Unix-socket mesh over worker processes
(real parallelism).  Both move the byte encoding documented in
docs/protocol.md, so message-volume accounting is identical.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import os
import socket
import struct
import time
from dataclasses import dataclass

from .engine import (
    EDGE_PRIMARY,
    EDGE_SHADOW,
    PRIMARY,
    SHADOW,
    Simulation,
    SimulationConfig,
    Vehicle,
    build_trip_log,
)
from .metrics import RunMetrics
from .partition import PartitionAssignment, PartitionedWorld, materialize

log = logging.getLogger(__name__)


class ProtocolError(Exception):
    """A sync record could not be applied; the lockstep contract is broken."""


@dataclass(frozen=True)
class Remove:
    vid: str
    edge: str

    kind = 0


@dataclass(frozen=True)
class Insert:
    vid: str
    edge: str
    lane: int
    pos: float
    speed: float
    route: tuple[str, ...]   # remaining route, border edge first
    depart_time: float

    kind = 1


@dataclass(frozen=True)
class Update:
    vid: str
    lane: int
    pos: float
    speed: float

    kind = 2


@dataclass
class RoundBatch:
    from_partition: int
    to_partition: int
    step: int
    records: list

    def sort_records(self) -> None:
        self.records.sort(key=lambda r: (r.kind, r.vid))


# ---------------------------------------------------------------------------
# wire encoding (docs/protocol.md)

_HEADER = struct.Struct("<IIQI")   # from, to, step, record count
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


def _pack_str(out: bytearray, s: str) -> None:
    b = s.encode()
    out += _U16.pack(len(b))
    out += b


def _unpack_str(buf: memoryview, off: int) -> tuple[str, int]:
    (n,) = _U16.unpack_from(buf, off)
    off += 2
    return bytes(buf[off : off + n]).decode(), off + n


def encode_batch(batch: RoundBatch) -> bytes:
    body = bytearray()
    body += _HEADER.pack(batch.from_partition, batch.to_partition,
                         batch.step, len(batch.records))
    for r in batch.records:
        rec = bytearray()
        rec.append(r.kind)
        _pack_str(rec, r.vid)
        if r.kind == 0:
            _pack_str(rec, r.edge)
        elif r.kind == 1:
            _pack_str(rec, r.edge)
            rec += _U16.pack(r.lane)
            rec += _F64.pack(r.pos)
            rec += _F64.pack(r.speed)
            rec += _F64.pack(r.depart_time)
            rec += _U16.pack(len(r.route))
            for e in r.route:
                _pack_str(rec, e)
        else:
            rec += _U16.pack(r.lane)
            rec += _F64.pack(r.pos)
            rec += _F64.pack(r.speed)
        body += _U32.pack(len(rec))
        body += rec
    return bytes(_U32.pack(len(body))) + bytes(body)


def decode_batch(data: bytes) -> RoundBatch:
    buf = memoryview(data)
    (total,) = _U32.unpack_from(buf, 0)
    if total != len(data) - 4:
        raise ProtocolError(f"frame length mismatch: {total} != {len(data) - 4}")
    off = 4
    frm, to, step, count = _HEADER.unpack_from(buf, off)
    off += _HEADER.size
    records = []
    for _ in range(count):
        (rlen,) = _U32.unpack_from(buf, off)
        off += 4
        end = off + rlen
        kind = buf[off]
        off += 1
        vid, off = _unpack_str(buf, off)
        if kind == 0:
            edge, off = _unpack_str(buf, off)
            records.append(Remove(vid, edge))
        elif kind == 1:
            edge, off = _unpack_str(buf, off)
            (lane,) = _U16.unpack_from(buf, off)
            off += 2
            pos, speed, depart = struct.unpack_from("<ddd", buf, off)
            off += 24
            (nroute,) = _U16.unpack_from(buf, off)
            off += 2
            route = []
            for _ in range(nroute):
                e, off = _unpack_str(buf, off)
                route.append(e)
            records.append(Insert(vid, edge, lane, pos, speed, tuple(route), depart))
        elif kind == 2:
            (lane,) = _U16.unpack_from(buf, off)
            off += 2
            pos, speed = struct.unpack_from("<dd", buf, off)
            off += 16
            records.append(Update(vid, lane, pos, speed))
        else:
            raise ProtocolError(f"unknown record kind {kind}")
        if off != end:
            raise ProtocolError(f"record length mismatch for {vid}")
    return RoundBatch(frm, to, step, records)


# ---------------------------------------------------------------------------
# protocol operations


def collect_outbound(sim: Simulation, world: PartitionedWorld, step: int,
                     k: int) -> dict[int, RoundBatch]:
    """One batch per peer partition (possibly empty) describing this step's
    border-edge activity.  Demotes handed-over vehicles to shadow role."""
    batches = {q: [] for q in range(k) if q != world.index}
    roles = world.edge_roles
    peers = world.border_peer
    for veh, from_e, to_e in sim.transitions:
        if from_e is not None and roles.get(from_e) == EDGE_PRIMARY:
            batches[peers[from_e]].append(Remove(veh.vid, from_e))
        if to_e is not None and roles.get(to_e) == EDGE_SHADOW:
            if veh.role != SHADOW:
                veh.role = SHADOW
                sim.authoritative_count -= 1
                sim.handed_out += 1
            batches[peers[to_e]].append(
                Insert(veh.vid, to_e, veh.lane, veh.pos, veh.speed,
                       veh.route[veh.route_index:], veh.depart_time)
            )
    for eid, role in roles.items():
        if role != EDGE_PRIMARY:
            continue
        peer = peers[eid]
        for occ in sim.lanes[eid]:
            for v in occ:
                if v.role == PRIMARY:
                    batches[peer].append(Update(v.vid, v.lane, v.pos, v.speed))
    out = {}
    for q, records in batches.items():
        b = RoundBatch(world.index, q, step, records)
        b.sort_records()
        out[q] = b
    return out


def exchange(all_batches: dict[int, dict[int, RoundBatch]], step: int,
             k: int) -> dict[int, list[RoundBatch]]:
    """In-process loopback delivery: route every sender's batches to their
    receivers, checking the lockstep contract (exactly one batch per directed
    pair, all for the same step)."""
    inbound: dict[int, list[RoundBatch]] = {p: [] for p in range(k)}
    for sender in range(k):
        batches = all_batches.get(sender, {})
        expected = set(range(k)) - {sender}
        if set(batches) != expected:
            raise ProtocolError(
                f"worker {sender} produced batches for {sorted(batches)}, "
                f"expected {sorted(expected)}"
            )
        for q, b in batches.items():
            if b.step != step:
                raise ProtocolError(f"worker {sender} sent step {b.step} during step {step}")
            inbound[q].append(b)
    return inbound


def apply_inbound(sim: Simulation, world: PartitionedWorld,
                  batches: list[RoundBatch]) -> None:
    """Apply one round's inbound records: Removes, then Inserts, then Updates,
    each ordered by vehicle id (then sender) for determinism."""
    records = []
    for b in batches:
        for r in b.records:
            records.append((r.kind, r.vid, b.from_partition, r))
    records.sort(key=lambda t: t[:3])
    lanes = sim.lanes
    for kind, vid, sender, rec in records:
        if kind == 0:  # Remove
            v = sim.vehicles.get(vid)
            if v is None or v.role != SHADOW or v.edge != rec.edge:
                raise ProtocolError(
                    f"partition {world.index}: Remove for unknown shadow "
                    f"{vid!r} on {rec.edge!r}"
                )
            lanes[v.edge][v.lane].remove(v)
            del sim.vehicles[vid]
        elif kind == 1:  # Insert
            if vid in sim.vehicles:
                raise ProtocolError(
                    f"partition {world.index}: Insert for already-present vehicle {vid!r}"
                )
            if world.edge_roles.get(rec.edge) != EDGE_PRIMARY:
                raise ProtocolError(
                    f"partition {world.index}: Insert on non-primary edge {rec.edge!r}"
                )
            edge = sim.network.edges[rec.edge]
            if not (0.0 <= rec.pos <= edge.length) or rec.speed < 0.0:
                raise ProtocolError(f"Insert for {vid!r} carries bad state")
            v = Vehicle(vid, rec.route, rec.edge, rec.lane, rec.pos, rec.speed,
                        rec.depart_time, role=PRIMARY)
            _insert_sorted(lanes[rec.edge][rec.lane], v)
            sim.vehicles[vid] = v
            sim._active_edges.add(rec.edge)
            sim.authoritative_count += 1
            sim.handed_in += 1
        else:  # Update
            v = sim.vehicles.get(vid)
            if v is None or v.role != SHADOW:
                raise ProtocolError(
                    f"partition {world.index}: Update for unknown shadow {vid!r}"
                )
            occ = lanes[v.edge][v.lane]
            occ.remove(v)
            v.lane = rec.lane
            v.pos = rec.pos
            v.speed = rec.speed
            _insert_sorted(lanes[v.edge][v.lane], v)


def _insert_sorted(occ: list, v) -> None:
    idx = 0
    while idx < len(occ) and occ[idx].pos > v.pos:
        idx += 1
    occ.insert(idx, v)


def split_trips(trips, network, assignment: PartitionAssignment) -> dict[int, list]:
    """Assign each vehicle to the partition owning the source junction of its
    first route edge (for border depart edges that is the shadow side, which
    hands the vehicle over in its first step)."""
    parts = assignment.parts
    out: dict[int, list] = {p: [] for p in range(assignment.k)}
    for spec in trips.vehicles:
        e = network.edges[spec.route[0]]
        out[parts[e.from_junction]].append(spec)
    return out


# ---------------------------------------------------------------------------
# lockstep runners


class StepHooks:
    """Optional observation points for the in-process runner (tests)."""

    def before_step(self, step: int, sims: list, worlds: list) -> None:
        pass

    def after_step(self, step: int, sims: list, worlds: list) -> None:
        pass

    def after_exchange(self, step: int, sims: list, worlds: list,
                       sent: dict[int, dict[int, RoundBatch]]) -> None:
        pass


def run_parallel(network, trips, config: SimulationConfig, k: int,
                 assignment: PartitionAssignment, workers: str = "inprocess",
                 hooks: StepHooks | None = None):
    """Lockstep parallel run over k partitions; returns (TripLog, RunMetrics).

    workers="inprocess" steps all partitions round-robin in this process
    (deterministic, inspectable); workers="process" runs one OS process per
    partition connected by a Unix-socket mesh.
    """
    if assignment.k != k:
        raise ValueError(f"assignment has k={assignment.k}, expected {k}")
    if workers == "inprocess":
        return _run_inprocess(network, trips, config, k, assignment, hooks)
    if workers == "process":
        if hooks is not None:
            raise ValueError("hooks are only supported by the in-process runner")
        return _run_processes(network, trips, config, k, assignment)
    raise ValueError(f"unknown worker mode {workers!r}")


def _run_inprocess(network, trips, config, k, assignment, hooks):
    worlds = materialize(network, assignment)
    sims = [Simulation(w.network, config, w.edge_roles, w.index) for w in worlds]
    per_part = split_trips(trips, network, assignment)
    for p, specs in per_part.items():
        sims[p].add_trips(sorted(specs, key=lambda s: (s.depart_time, s.id)))

    message_bytes = 0
    comm_seconds = 0.0
    t0 = time.perf_counter()
    for step in range(config.total_steps):
        if hooks:
            hooks.before_step(step, sims, worlds)
        for sim in sims:
            sim.step()
        if hooks:
            hooks.after_step(step, sims, worlds)
        if k > 1:
            tc = time.perf_counter()
            sent = {p: collect_outbound(sims[p], worlds[p], step, k) for p in range(k)}
            wire = {
                p: {q: encode_batch(b) for q, b in batches.items()}
                for p, batches in sent.items()
            }
            for frames in wire.values():
                for data in frames.values():
                    message_bytes += len(data)
            decoded = {
                p: {q: decode_batch(data) for q, data in frames.items()}
                for p, frames in wire.items()
            }
            inbound = exchange(decoded, step, k)
            for q in range(k):
                apply_inbound(sims[q], worlds[q], inbound[q])
            comm_seconds += time.perf_counter() - tc
            if hooks:
                hooks.after_exchange(step, sims, worlds, sent)
    wall = time.perf_counter() - t0

    return _merge_results(
        network, trips, config, k,
        [_worker_report(sim) for sim in sims],
        wall, message_bytes, comm_seconds,
    )


def _worker_report(sim: Simulation) -> dict:
    return {
        "departs": sim.departs,
        "arrivals": sim.arrivals,
        "enroute": sim.enroute_report(),
        "vehicle_steps": sim.vehicle_steps,
        "stopped": sim.stopped_vehicle_steps,
        "inserted": sim.inserted_count,
        "arrived": sim.arrived_count,
        "grouping_seconds": sim.grouping_seconds,
    }


def _merge_results(network, trips, config, k, reports, wall, message_bytes, comm_seconds):
    departs: dict[str, float] = {}
    arrivals: dict[str, float] = {}
    enroute: dict[str, tuple[int, float]] = {}
    for rep in reports:
        for vid, t in rep["departs"].items():
            if vid in departs:
                raise ProtocolError(f"vehicle {vid!r} departed in two partitions")
            departs[vid] = t
        for vid, t in rep["arrivals"].items():
            if vid in arrivals:
                raise ProtocolError(f"vehicle {vid!r} arrived in two partitions")
            arrivals[vid] = t
        for vid, state in rep["enroute"].items():
            if vid in enroute:
                raise ProtocolError(f"vehicle {vid!r} is primary in two partitions")
            enroute[vid] = state
    trip_log = build_trip_log(network, trips, departs, arrivals, enroute)
    metrics = RunMetrics(
        wall_time=wall,
        steps=config.total_steps,
        vehicle_steps=[rep["vehicle_steps"] for rep in reports],
        inserted=sum(rep["inserted"] for rep in reports),
        arrived=sum(rep["arrived"] for rep in reports),
        en_route=len(enroute),
        message_bytes=message_bytes,
        comm_seconds=comm_seconds,
        grouping_seconds=sum(rep["grouping_seconds"] for rep in reports),
        stopped_vehicle_steps=sum(rep["stopped"] for rep in reports),
    )
    return trip_log, metrics


# ---------------------------------------------------------------------------
# process workers over a Unix-socket mesh


class SocketMesh:
    """Full mesh of Unix-domain stream sockets between k worker processes.

    Rank i listens on <dir>/w<i>.sock; after all workers pass the setup
    barrier, rank i dials every lower rank and accepts from every higher one.
    A 4-byte little-endian rank hello identifies the dialing peer.
    """

    def __init__(self, rank: int, k: int, sock_dir: str, barrier) -> None:
        self.rank = rank
        self.k = k
        self.peers: dict[int, socket.socket] = {}
        self._listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._listener.bind(os.path.join(sock_dir, f"w{rank}.sock"))
        self._listener.listen(k)
        barrier.wait()
        for j in range(rank):
            s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            s.connect(os.path.join(sock_dir, f"w{j}.sock"))
            s.sendall(_U32.pack(rank))
            self.peers[j] = s
        for _ in range(rank + 1, k):
            s, _addr = self._listener.accept()
            (peer,) = _U32.unpack(self._recv_exact(s, 4))
            self.peers[peer] = s

    @staticmethod
    def _recv_exact(s: socket.socket, n: int) -> bytes:
        chunks = []
        while n:
            chunk = s.recv(n)
            if not chunk:
                raise ProtocolError("peer closed the connection mid-frame")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def exchange(self, step: int, frames: dict[int, bytes]) -> list[bytes]:
        """Send one frame to every peer, then receive one from each; the
        matched step numbers make this a barrier."""
        for q in sorted(self.peers):
            self.peers[q].sendall(frames[q])
        received = []
        for q in sorted(self.peers):
            s = self.peers[q]
            head = self._recv_exact(s, 4)
            (length,) = _U32.unpack(head)
            received.append(head + self._recv_exact(s, length))
        return received

    def close(self) -> None:
        for s in self.peers.values():
            s.close()
        self._listener.close()


def _process_worker(world, specs, config, k, sock_dir, barrier, result_q):
    try:
        mesh = SocketMesh(world.index, k, sock_dir, barrier)
        sim = Simulation(world.network, config, world.edge_roles, world.index)
        sim.add_trips(sorted(specs, key=lambda s: (s.depart_time, s.id)))
        message_bytes = 0
        comm_seconds = 0.0
        for step in range(config.total_steps):
            sim.step()
            tc = time.perf_counter()
            batches = collect_outbound(sim, world, step, k)
            frames = {q: encode_batch(b) for q, b in batches.items()}
            message_bytes += sum(len(f) for f in frames.values())
            raw = mesh.exchange(step, frames)
            inbound = []
            for data in raw:
                b = decode_batch(data)
                if b.step != step or b.to_partition != world.index:
                    raise ProtocolError(
                        f"worker {world.index} got frame for step {b.step} "
                        f"to {b.to_partition} during step {step}"
                    )
                inbound.append(b)
            apply_inbound(sim, world, inbound)
            comm_seconds += time.perf_counter() - tc
        mesh.close()
        rep = _worker_report(sim)
        rep["message_bytes"] = message_bytes
        rep["comm_seconds"] = comm_seconds
        result_q.put((world.index, rep))
    except BaseException as exc:  # surface worker failures to the parent
        result_q.put((world.index, {"error": f"{type(exc).__name__}: {exc}"}))
        raise


def _run_processes(network, trips, config, k, assignment):
    import tempfile

    worlds = materialize(network, assignment)
    per_part = split_trips(trips, network, assignment)
    ctx = mp.get_context("fork")
    result_q = ctx.SimpleQueue()
    barrier = ctx.Barrier(k)
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="roadsim-mesh-") as sock_dir:
        procs = [
            ctx.Process(
                target=_process_worker,
                args=(worlds[p], per_part[p], config, k, sock_dir, barrier, result_q),
            )
            for p in range(k)
        ]
        for pr in procs:
            pr.start()
        reports: dict[int, dict] = {}
        while len(reports) < k:
            rank, rep = result_q.get()
            if "error" in rep:
                for pr in procs:
                    pr.terminate()
                raise ProtocolError(f"worker {rank} failed: {rep['error']}")
            reports[rank] = rep
        for pr in procs:
            pr.join()
    wall = time.perf_counter() - t0
    ordered = [reports[p] for p in range(k)]
    message_bytes = sum(rep["message_bytes"] for rep in ordered)
    comm_seconds = sum(rep["comm_seconds"] for rep in ordered)
    return _merge_results(network, trips, config, k, ordered, wall,
                          message_bytes, comm_seconds)
