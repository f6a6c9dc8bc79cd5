"""Command-line entry point.

Subcommands: generate-grid, generate-trips, partition, run, compare, bench.
Every command is reproducible from its flags plus input files; all randomness
flows from explicit --seed values.  A key=value config file can provide
defaults which individual flags override.

Exit codes: 0 success, 1 usage error, 2 input error, 3 runtime invariant
violation.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import demand, engine, metrics, netmodel, partition, sync
from .grouping import GroupingConfig
from .kinematics import CfmParams

USAGE_ERROR = 1
INPUT_ERROR = 2
RUNTIME_ERROR = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _load_config_file(path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _setting(args, config: dict, name: str, cast, default):
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in config:
        return cast(config[name])
    return default


def _sim_config(args, config) -> engine.SimulationConfig:
    params = CfmParams(
        accel=_setting(args, config, "accel", float, 2.6),
        decel=_setting(args, config, "decel", float, 4.5),
        tau=_setting(args, config, "step_length", float, 0.5),
        min_gap=_setting(args, config, "min_gap", float, 2.5),
        vehicle_length=_setting(args, config, "vehicle_length", float, 5.0),
    )
    grouping = None
    if _setting(args, config, "group", lambda s: s.lower() in ("1", "true", "yes"), False):
        grouping = GroupingConfig(
            alpha=_setting(args, config, "alpha", float, 0.0),
            zone_count=_setting(args, config, "zones", int, 3),
            exit_fraction=_setting(args, config, "exit_fraction", float, 0.10),
            exit_cap=_setting(args, config, "exit_cap", float, 50.0),
        )
    return engine.SimulationConfig(
        step_length=_setting(args, config, "step_length", float, 0.5),
        end_time=_setting(args, config, "end_time", float, 3600.0),
        grouping=grouping,
        params=params,
    )


def _add_grouping_flags(p):
    p.add_argument("--group", action="store_const", const=True, default=None,
                   help="enable congestion-time vehicle grouping")
    p.add_argument("--alpha", type=float, help="congestion threshold fraction of speed limit (default 0)")
    p.add_argument("--zones", type=int, help="body zones per lane (default 3)")
    p.add_argument("--exit-fraction", dest="exit_fraction", type=float,
                   help="exit zone fraction of lane length (default 0.10)")
    p.add_argument("--exit-cap", dest="exit_cap", type=float,
                   help="exit zone length cap in metres (default 50)")


def _add_sim_flags(p):
    p.add_argument("--step-length", dest="step_length", type=float,
                   help="timestep in seconds (default 0.5)")
    p.add_argument("--end-time", dest="end_time", type=float,
                   help="simulated seconds (default 3600)")
    p.add_argument("--config", help="key=value config file; flags override it")
    _add_grouping_flags(p)


def build_parser() -> _Parser:
    parser = _Parser(prog="roadsim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-grid", help="write a synthetic grid network file")
    p.add_argument("--cols", type=int, default=10, help="grid columns (default 10)")
    p.add_argument("--rows", type=int, default=10, help="grid rows (default 10)")
    p.add_argument("--hlen", type=float, default=100.0, help="horizontal edge length, m (default 100)")
    p.add_argument("--vlen", type=float, default=100.0, help="vertical edge length, m (default 100)")
    p.add_argument("--lanes", type=int, default=1, help="lanes per edge (default 1)")
    p.add_argument("--speed-limit", dest="speed_limit", type=float, default=13.89,
                   help="speed limit, m/s (default 13.89)")
    p.add_argument("--no-signals", action="store_true", help="generate without traffic signals")
    p.add_argument("-o", "--output", required=True, help="output network file")

    p = sub.add_parser("generate-trips", help="write a seeded random trip file")
    p.add_argument("--network", required=True, help="network file")
    p.add_argument("--rate", type=float, required=True, help="vehicle insertions per second")
    p.add_argument("--duration", type=float, required=True, help="insertion window, seconds")
    p.add_argument("--seed", type=int, default=1, help="PRNG seed (default 1)")
    p.add_argument("-o", "--output", required=True, help="output trip file")

    p = sub.add_parser("partition", help="write a junction-to-partition assignment file")
    p.add_argument("--network", required=True, help="network file")
    p.add_argument("--trips", help="trip file for traffic-aware weights")
    p.add_argument("--topology-only", action="store_true",
                   help="ignore trips; balance by junction count")
    p.add_argument("-k", "--partitions", type=int, required=True, help="partition count")
    p.add_argument("--seed", type=int, default=1, help="partitioner seed (default 1)")
    p.add_argument("--epsilon", type=float, default=0.05,
                   help="balance slack over mean weight (default 0.05)")
    p.add_argument("-o", "--output", required=True, help="output assignment file")

    p = sub.add_parser("run", help="run a simulation and write trip log + metrics CSVs")
    p.add_argument("--network", required=True, help="network file")
    p.add_argument("--trips", required=True, help="trip file")
    p.add_argument("-k", "--partitions", type=int, default=1,
                   help="worker count; 1 runs the sequential engine (default 1)")
    p.add_argument("--assignment", help="assignment file (required for k > 1)")
    p.add_argument("--workers", choices=("inprocess", "process"), default="inprocess",
                   help="parallel worker mode (default inprocess)")
    p.add_argument("--out-dir", dest="out_dir", required=True, help="output directory")
    _add_sim_flags(p)

    p = sub.add_parser("compare", help="compare two trip logs")
    p.add_argument("--base", required=True, help="baseline trip log CSV")
    p.add_argument("--other", required=True, help="other trip log CSV")
    p.add_argument("--mode", choices=("id", "rank"), default="id",
                   help="pair vehicles by id or by sorted rank (default id)")
    p.add_argument("-o", "--output", required=True, help="output comparison CSV")

    p = sub.add_parser("bench", help="run a scenario at several partition counts, "
                                     "with and without grouping")
    p.add_argument("--network", required=True, help="network file")
    p.add_argument("--trips", required=True, help="trip file")
    p.add_argument("--partitions", default="1,2,4",
                   help="comma-separated worker counts (default 1,2,4)")
    p.add_argument("--workers", choices=("inprocess", "process"), default="process",
                   help="parallel worker mode (default process)")
    p.add_argument("--seed", type=int, default=1, help="partitioner seed (default 1)")
    p.add_argument("-o", "--output", required=True, help="output speedup CSV")
    _add_sim_flags(p)

    return parser


def _cmd_generate_grid(args) -> int:
    net = netmodel.generate_grid(
        args.cols, args.rows, args.hlen, args.vlen, args.lanes,
        args.speed_limit, signalized=not args.no_signals,
    )
    netmodel.save_network(net, args.output)
    print(f"wrote {args.output}: {len(net.junctions)} junctions, {len(net.edges)} edges")
    return 0


def _cmd_generate_trips(args) -> int:
    net = netmodel.load_network(args.network)
    if args.rate <= 0 or args.duration <= 0:
        raise ValueError("rate and duration must be positive")
    trips = demand.generate_random_trips(net, args.rate, args.duration, args.seed)
    demand.save_trips(trips, args.output)
    print(f"wrote {args.output}: {len(trips.vehicles)} vehicles")
    return 0


def _cmd_partition(args) -> int:
    net = netmodel.load_network(args.network)
    if args.topology_only or not args.trips:
        profile = partition.TrafficProfile({})
    else:
        trips = demand.load_trips(args.trips, net)
        profile = partition.edge_access_counts(trips, net)
    weights = partition.vertex_weights(net, profile)
    asg = partition.partition(net, weights, args.partitions, seed=args.seed,
                              epsilon=args.epsilon)
    partition.save_assignment(asg, args.output)
    ratio = partition.border_edge_ratio(net, asg)
    flag = "" if asg.balanced else " (balance infeasible, best effort)"
    print(f"wrote {args.output}: k={asg.k}, cut={partition.cut_size(net, asg)}, "
          f"border edge ratio={ratio:.4%}{flag}")
    return 0


def _cmd_run(args) -> int:
    config_file = _load_config_file(args.config) if args.config else {}
    net = netmodel.load_network(args.network)
    trips = demand.load_trips(args.trips, net)
    cfg = _sim_config(args, config_file)
    k = args.partitions
    if k < 1:
        raise ValueError("--partitions must be >= 1")
    if k == 1 and not args.assignment:
        trip_log, m = engine.run(net, trips, cfg)
    else:
        if args.assignment:
            asg = partition.load_assignment(args.assignment, net)
            if asg.k != k:
                raise ValueError(f"assignment file has k={asg.k}, flag says {k}")
        else:
            raise ValueError("--assignment is required for --partitions > 1")
        trip_log, m = sync.run_parallel(net, trips, cfg, k, asg, workers=args.workers)

    os.makedirs(args.out_dir, exist_ok=True)
    trip_log.save_csv(os.path.join(args.out_dir, "triplog.csv"))
    m.save_csv(os.path.join(args.out_dir, "run.csv"))
    counts, ratio = metrics.partition_load_report(m)
    metrics.save_load_report(counts, os.path.join(args.out_dir, "load.csv"))
    if m.arrived:
        metrics.save_cdf(metrics.trip_time_cdf(trip_log),
                         os.path.join(args.out_dir, "cdf.csv"))
    print(f"{m.steps} steps, {m.total_vehicle_steps} vehicle-steps, "
          f"{m.arrived} arrived, {m.en_route} en route, "
          f"wall {m.wall_time:.2f}s, load ratio {ratio:.3f}")
    return 0


def _cmd_compare(args) -> int:
    base = engine.TripLog.load_csv(args.base)
    other = engine.TripLog.load_csv(args.other)
    report = metrics.compare(base, other, mode=args.mode)
    report.save_csv(args.output)
    print(f"trip time diff mean={report.mean_trip_time_diff:.4%} "
          f"max={report.max_trip_time_diff:.4%} over {report.matched_arrived} vehicles; "
          f"distance diff mean={report.mean_distance_diff:.4%} "
          f"over {report.matched_en_route}; unmatched={report.unmatched}")
    return 0


def _cmd_bench(args) -> int:
    config_file = _load_config_file(args.config) if args.config else {}
    net = netmodel.load_network(args.network)
    trips = demand.load_trips(args.trips, net)
    ks = [int(s) for s in args.partitions.split(",") if s]
    if not ks or any(k < 1 for k in ks):
        raise ValueError("--partitions must list integers >= 1")

    profile = partition.edge_access_counts(trips, net)
    weights = partition.vertex_weights(net, profile)
    rows = []
    base_wall = None
    for k in sorted(set(ks)):
        asg = partition.partition(net, weights, k, seed=args.seed)
        for grouped in (False, True):
            gargs = argparse.Namespace(**vars(args))
            gargs.group = True if grouped else None
            cfg = _sim_config(gargs, config_file)
            if not grouped and cfg.grouping is not None:
                cfg = engine.SimulationConfig(cfg.step_length, cfg.end_time, None, cfg.params)
            t0 = time.perf_counter()
            if k == 1:
                _, m = engine.run(net, trips, cfg)
            else:
                _, m = sync.run_parallel(net, trips, cfg, k, asg, workers=args.workers)
            wall = time.perf_counter() - t0
            if base_wall is None and not grouped:
                base_wall = wall
            rows.append((k, grouped, wall, m.total_vehicle_steps, m.arrived))
            print(f"k={k} grouped={grouped}: wall {wall:.2f}s, "
                  f"speedup {base_wall / wall:.2f}x")
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write("partitions,grouped,wall_time,speedup,vehicle_steps,arrived\n")
        for k, grouped, wall, vsteps, arrived in rows:
            fh.write(f"{k},{int(grouped)},{wall!r},{base_wall / wall!r},{vsteps},{arrived}\n")
    print(f"wrote {args.output}")
    return 0


_COMMANDS = {
    "generate-grid": _cmd_generate_grid,
    "generate-trips": _cmd_generate_trips,
    "partition": _cmd_partition,
    "run": _cmd_run,
    "compare": _cmd_compare,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError,
            netmodel.NetworkFormatError, demand.RoutingError) as exc:
        print(f"roadsim: input error: {exc}", file=sys.stderr)
        return INPUT_ERROR
    except (engine.SimulationInvariantError, sync.ProtocolError) as exc:
        print(f"roadsim: runtime invariant violation: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
