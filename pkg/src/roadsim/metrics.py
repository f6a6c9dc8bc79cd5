"""Measurement layer: run metrics, trip-time CDFs, accuracy comparison
between runs, and per-partition load reports.

Functions here operate on TripLog objects (anything with a `.rows` mapping of
vehicle id to records carrying depart_time/arrive_time/distance) and are pure:
re-running them on the same logs gives identical CSV output.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RunMetrics:
    wall_time: float
    steps: int
    vehicle_steps: list[int]       # one entry per partition
    inserted: int
    arrived: int
    en_route: int
    message_bytes: int = 0
    comm_seconds: float = 0.0
    grouping_seconds: float = 0.0
    stopped_vehicle_steps: int = 0

    @property
    def total_vehicle_steps(self) -> int:
        return sum(self.vehicle_steps)

    @property
    def partitions(self) -> int:
        return len(self.vehicle_steps)

    def save_csv(self, path) -> None:
        header = ("wall_time,steps,partitions,total_vehicle_steps,inserted,arrived,"
                  "en_route,message_bytes,comm_seconds,grouping_seconds,stopped_vehicle_steps")
        row = (f"{self.wall_time!r},{self.steps},{self.partitions},"
               f"{self.total_vehicle_steps},{self.inserted},{self.arrived},"
               f"{self.en_route},{self.message_bytes},{self.comm_seconds!r},"
               f"{self.grouping_seconds!r},{self.stopped_vehicle_steps}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n" + row + "\n")


@dataclass
class ComparisonReport:
    mean_trip_time_diff: float
    max_trip_time_diff: float
    mean_distance_diff: float
    max_distance_diff: float
    matched_arrived: int
    matched_en_route: int
    unmatched: int
    per_vehicle: list = field(default_factory=list)  # (vehicle_id, base, other, rel_diff)

    def save_csv(self, path) -> None:
        lines = ["vehicle_id,base,other,rel_diff"]
        for vid, base, other, diff in self.per_vehicle:
            lines.append(f"{vid},{base!r},{other!r},{diff!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def trip_time_cdf(log) -> list[tuple[float, float]]:
    """Empirical CDF of trip times over arrived vehicles: sorted
    (time, cumulative fraction) pairs, duplicates collapsed."""
    times = sorted(
        r.arrive_time - r.depart_time for r in log.rows.values() if r.arrive_time is not None
    )
    if not times:
        raise ValueError("no arrived vehicles in log")
    n = len(times)
    out = []
    for i, t in enumerate(times, start=1):
        if out and out[-1][0] == t:
            out[-1] = (t, i / n)
        else:
            out.append((t, i / n))
    return out


def distance_cdf(log) -> list[tuple[float, float]]:
    """Empirical CDF of travelled distance over en-route vehicles."""
    dists = sorted(r.distance for r in log.rows.values() if r.arrive_time is None)
    if not dists:
        raise ValueError("no en-route vehicles in log")
    n = len(dists)
    out = []
    for i, d in enumerate(dists, start=1):
        if out and out[-1][0] == d:
            out[-1] = (d, i / n)
        else:
            out.append((d, i / n))
    return out


def save_cdf(cdf, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("value,fraction\n")
        for v, f in cdf:
            fh.write(f"{v!r},{f!r}\n")


def _rel_diffs(pairs):
    """(vehicle_id, base, other) -> per-vehicle relative differences.

    Pairs with base == 0 contribute 0 when other is also 0 and are otherwise
    dropped from the aggregate (returned separately as a count)."""
    diffs = []
    dropped = 0
    for vid, base, other in pairs:
        if base == 0.0:
            if other == 0.0:
                diffs.append((vid, base, other, 0.0))
            else:
                dropped += 1
            continue
        diffs.append((vid, base, other, abs(other - base) / base))
    return diffs, dropped


def compare(base, other, mode: str = "id") -> ComparisonReport:
    """Relative trip-time differences (arrived vehicles) and travelled-distance
    differences (en-route vehicles) between two logs, normalised by `base`.

    mode "id" pairs vehicles by id; a vehicle arrived in one log but en route
    in the other counts as unmatched.  mode "rank" sorts each population and
    pairs by rank, which is how per-vehicle differences are reported when the
    two runs finish different vehicle sets; surplus entries are unmatched.
    """
    if mode not in ("id", "rank"):
        raise ValueError("mode must be 'id' or 'rank'")

    base_arr = {k: r.arrive_time - r.depart_time
                for k, r in base.rows.items() if r.arrive_time is not None}
    other_arr = {k: r.arrive_time - r.depart_time
                 for k, r in other.rows.items() if r.arrive_time is not None}
    base_enr = {k: r.distance for k, r in base.rows.items() if r.arrive_time is None}
    other_enr = {k: r.distance for k, r in other.rows.items() if r.arrive_time is None}

    unmatched = 0
    if mode == "id":
        tt_pairs = [(k, base_arr[k], other_arr[k]) for k in sorted(base_arr) if k in other_arr]
        dd_pairs = [(k, base_enr[k], other_enr[k]) for k in sorted(base_enr) if k in other_enr]
        all_base = set(base.rows)
        all_other = set(other.rows)
        unmatched += len(all_base ^ all_other)
        unmatched += len(set(base_arr) & set(other_enr))
        unmatched += len(set(base_enr) & set(other_arr))
    else:
        bt, ot = sorted(base_arr.values()), sorted(other_arr.values())
        n = min(len(bt), len(ot))
        tt_pairs = [(f"rank{i:06d}", bt[i], ot[i]) for i in range(n)]
        unmatched += abs(len(bt) - len(ot))
        bd, od = sorted(base_enr.values()), sorted(other_enr.values())
        m = min(len(bd), len(od))
        dd_pairs = [(f"rank{i:06d}", bd[i], od[i]) for i in range(m)]
        unmatched += abs(len(bd) - len(od))

    tt, tt_dropped = _rel_diffs(tt_pairs)
    dd, dd_dropped = _rel_diffs(dd_pairs)
    unmatched += tt_dropped + dd_dropped

    def _mean(vals):
        return sum(vals) / len(vals) if vals else 0.0

    tt_vals = [d for *_, d in tt]
    dd_vals = [d for *_, d in dd]
    return ComparisonReport(
        mean_trip_time_diff=_mean(tt_vals),
        max_trip_time_diff=max(tt_vals) if tt_vals else 0.0,
        mean_distance_diff=_mean(dd_vals),
        max_distance_diff=max(dd_vals) if dd_vals else 0.0,
        matched_arrived=len(tt),
        matched_en_route=len(dd),
        unmatched=unmatched,
        per_vehicle=tt + dd,
    )


def partition_load_report(metrics: RunMetrics):
    """Per-partition vehicle-step counts sorted descending plus the max/mean
    imbalance ratio (1.0 for a single partition or perfectly even load)."""
    counts = sorted(metrics.vehicle_steps, reverse=True)
    mean = sum(counts) / len(counts)
    ratio = counts[0] / mean if mean > 0 else 1.0
    return counts, ratio


def save_load_report(counts, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("partition_rank,vehicle_steps\n")
        for i, c in enumerate(counts):
            fh.write(f"{i},{c}\n")
