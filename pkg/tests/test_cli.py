import os

import pytest

from roadsim.cli import build_parser, main
from roadsim.engine import TripLog


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run_cli("generate-grid", "--cols", "4", "--rows", "3",
                   "-o", str(d / "net.txt")) == 0
    assert run_cli("generate-trips", "--network", str(d / "net.txt"),
                   "--rate", "0.5", "--duration", "60", "--seed", "3",
                   "-o", str(d / "trips.txt")) == 0
    return d


def test_generate_grid_writes_parseable_file(workdir):
    from roadsim.netmodel import load_network, validate
    net = load_network(workdir / "net.txt")
    assert len(net.junctions) == 12
    assert validate(net) == []


def test_generate_grid_150x10_junction_count(tmp_path):
    out = tmp_path / "big.txt"
    assert run_cli("generate-grid", "--cols", "150", "--rows", "10",
                   "--hlen", "100", "--vlen", "300", "-o", str(out)) == 0
    from roadsim.netmodel import load_network
    assert len(load_network(out).junctions) == 1500


def test_generate_grid_degenerate_is_input_error(tmp_path, capsys):
    rc = run_cli("generate-grid", "--cols", "1", "--rows", "1",
                 "-o", str(tmp_path / "x.txt"))
    assert rc == 2


def test_usage_error_exit_code_1(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("generate-grid")  # missing -o
    assert exc.value.code == 1


def test_generate_trips_deterministic(workdir, tmp_path):
    t2 = tmp_path / "t2.txt"
    assert run_cli("generate-trips", "--network", str(workdir / "net.txt"),
                   "--rate", "0.5", "--duration", "60", "--seed", "3",
                   "-o", str(t2)) == 0
    assert t2.read_bytes() == (workdir / "trips.txt").read_bytes()


def test_generate_trips_zero_rate_is_input_error(workdir, tmp_path):
    rc = run_cli("generate-trips", "--network", str(workdir / "net.txt"),
                 "--rate", "0", "--duration", "60",
                 "-o", str(tmp_path / "t.txt"))
    assert rc == 2


def test_partition_k1_all_zero(workdir, tmp_path):
    out = tmp_path / "asg.txt"
    assert run_cli("partition", "--network", str(workdir / "net.txt"),
                   "-k", "1", "-o", str(out)) == 0
    body = out.read_text()
    assert "k,1" in body
    assert all(line.endswith(",0") for line in body.splitlines()[2:])


def test_partition_traffic_aware_vs_topology_differ_on_skew(tmp_path):
    # demand concentrated on one side should shift the balanced split
    from roadsim import demand, netmodel
    from roadsim.demand import TripTable, VehicleSpec, save_trips
    net = netmodel.generate_grid(6, 2, 100.0, 100.0, signalized=False)
    netmodel.save_network(net, tmp_path / "net.txt")
    west = [e for e in sorted(net.edges) if "j000" in e or "j001" in e]
    trips = TripTable([
        VehicleSpec(f"s{i}", float(i), tuple(demand.shortest_route(net, west[i % 4], west[(i + 2) % 4])))
        for i in range(40)
    ])
    save_trips(trips, tmp_path / "trips.txt")
    assert run_cli("partition", "--network", str(tmp_path / "net.txt"),
                   "--trips", str(tmp_path / "trips.txt"),
                   "-k", "2", "-o", str(tmp_path / "aware.txt")) == 0
    assert run_cli("partition", "--network", str(tmp_path / "net.txt"),
                   "--topology-only", "-k", "2", "-o", str(tmp_path / "topo.txt")) == 0
    assert (tmp_path / "aware.txt").read_text() != (tmp_path / "topo.txt").read_text()


def test_run_sequential_and_outputs(workdir, tmp_path):
    out = tmp_path / "seq"
    assert run_cli("run", "--network", str(workdir / "net.txt"),
                   "--trips", str(workdir / "trips.txt"),
                   "--end-time", "300", "--out-dir", str(out)) == 0
    assert (out / "triplog.csv").exists()
    assert (out / "run.csv").exists()
    assert (out / "load.csv").exists()
    assert (out / "cdf.csv").exists()


def test_run_twice_identical_logs(workdir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("run", "--network", str(workdir / "net.txt"),
                       "--trips", str(workdir / "trips.txt"),
                       "--end-time", "300", "--out-dir", str(out)) == 0
    assert (a / "triplog.csv").read_bytes() == (b / "triplog.csv").read_bytes()


def test_run_k1_parallel_matches_sequential(workdir, tmp_path):
    asg = tmp_path / "asg1.txt"
    assert run_cli("partition", "--network", str(workdir / "net.txt"),
                   "-k", "1", "-o", str(asg)) == 0
    seq, par = tmp_path / "seq", tmp_path / "par"
    assert run_cli("run", "--network", str(workdir / "net.txt"),
                   "--trips", str(workdir / "trips.txt"),
                   "--end-time", "300", "--out-dir", str(seq)) == 0
    assert run_cli("run", "--network", str(workdir / "net.txt"),
                   "--trips", str(workdir / "trips.txt"),
                   "--end-time", "300", "--partitions", "1",
                   "--assignment", str(asg), "--out-dir", str(par)) == 0
    assert (seq / "triplog.csv").read_bytes() == (par / "triplog.csv").read_bytes()


def test_run_k2_and_compare_zero_diff(workdir, tmp_path):
    asg = tmp_path / "asg2.txt"
    assert run_cli("partition", "--network", str(workdir / "net.txt"),
                   "--trips", str(workdir / "trips.txt"),
                   "-k", "2", "-o", str(asg)) == 0
    seq, par = tmp_path / "seq", tmp_path / "par"
    for extra, out in ((["--partitions", "1"], seq),
                       (["--partitions", "2", "--assignment", str(asg)], par)):
        assert run_cli("run", "--network", str(workdir / "net.txt"),
                       "--trips", str(workdir / "trips.txt"),
                       "--end-time", "300", "--out-dir", str(out), *extra) == 0
    cmp_out = tmp_path / "cmp.csv"
    assert run_cli("compare", "--base", str(seq / "triplog.csv"),
                   "--other", str(par / "triplog.csv"),
                   "-o", str(cmp_out)) == 0
    assert cmp_out.exists()


def test_compare_log_with_itself(workdir, tmp_path, capsys):
    out = tmp_path / "r"
    assert run_cli("run", "--network", str(workdir / "net.txt"),
                   "--trips", str(workdir / "trips.txt"),
                   "--end-time", "300", "--out-dir", str(out)) == 0
    assert run_cli("compare", "--base", str(out / "triplog.csv"),
                   "--other", str(out / "triplog.csv"),
                   "-o", str(tmp_path / "c.csv")) == 0
    assert "mean=0.0000%" in capsys.readouterr().out


def test_compare_missing_file_is_input_error(tmp_path):
    rc = run_cli("compare", "--base", str(tmp_path / "no.csv"),
                 "--other", str(tmp_path / "no2.csv"), "-o", str(tmp_path / "c.csv"))
    assert rc == 2


def test_group_flag_free_flow_identical(tmp_path):
    # light traffic never satisfies the alpha=0 congestion test, so grouping
    # must not change a single byte of the log
    from roadsim import netmodel
    net = netmodel.generate_grid(3, 3, 100.0, 100.0, signalized=False)
    netmodel.save_network(net, tmp_path / "net.txt")
    assert run_cli("generate-trips", "--network", str(tmp_path / "net.txt"),
                   "--rate", "0.1", "--duration", "50", "--seed", "2",
                   "-o", str(tmp_path / "trips.txt")) == 0
    a, b = tmp_path / "plain", tmp_path / "grouped"
    assert run_cli("run", "--network", str(tmp_path / "net.txt"),
                   "--trips", str(tmp_path / "trips.txt"),
                   "--end-time", "200", "--out-dir", str(a)) == 0
    assert run_cli("run", "--network", str(tmp_path / "net.txt"),
                   "--trips", str(tmp_path / "trips.txt"),
                   "--end-time", "200", "--group", "--out-dir", str(b)) == 0
    assert (a / "triplog.csv").read_bytes() == (b / "triplog.csv").read_bytes()


def test_config_file_flag_override(workdir, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("end_time=300\nstep_length=0.5\n")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert run_cli("run", "--network", str(workdir / "net.txt"),
                   "--trips", str(workdir / "trips.txt"),
                   "--config", str(cfg), "--out-dir", str(out1)) == 0
    assert run_cli("run", "--network", str(workdir / "net.txt"),
                   "--trips", str(workdir / "trips.txt"),
                   "--end-time", "300", "--out-dir", str(out2)) == 0
    assert (out1 / "triplog.csv").read_bytes() == (out2 / "triplog.csv").read_bytes()


def test_bench_k1_speedup_one(workdir, tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert run_cli("bench", "--network", str(workdir / "net.txt"),
                   "--trips", str(workdir / "trips.txt"),
                   "--partitions", "1", "--end-time", "120",
                   "--workers", "inprocess", "-o", str(out)) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("partitions,grouped")
    first = lines[1].split(",")
    assert first[0] == "1" and float(first[3]) == 1.0


def test_every_subcommand_documents_flags():
    parser = build_parser()
    for name, sub in parser._subparsers._group_actions[0].choices.items():
        text = sub.format_help()
        for action in sub._actions:
            for opt in action.option_strings:
                if opt.startswith("--"):
                    assert opt in text, f"{name}: {opt} missing from --help"
            assert action.help or action.dest == "help", \
                f"{name}: {action.dest} lacks help text"
