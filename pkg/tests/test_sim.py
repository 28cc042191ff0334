from __future__ import annotations

import json
import math
from decimal import Decimal

import pytest

from shardbench.acceptance import fault_config
from shardbench.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_OK, main
from shardbench.errors import BadTrace, ConfigInvalid, ExportError
from shardbench.ledger import MB, EndorsedTx, Verdict
from shardbench.sim import (
    ExperimentConfig,
    Topology,
    config_from_mapping,
    export_results,
    generate_workload,
    load_config,
    load_trace,
    run_experiment,
    simulate_experiment,
)
from shardbench.sim.des import EventLoop, NetworkModel
from shardbench.sim.metrics import CSV_COLUMNS, percentile, render_csv
from shardbench.sim.node import ShardNode
from shardbench.sim.sweep import run_sweep

SMALL = dict(shards=2, concurrent_clients=20, intermediary_group_size=5, tx_count=100)
SCHEMES = ("hicocs", "vanilla", "occ", "twopl")


def small(**kw) -> ExperimentConfig:
    return ExperimentConfig(**{**SMALL, **kw})


# ---------------------------------------------------------------- config
@pytest.mark.parametrize("change", [
    {"skewness": 150}, {"skewness": -1}, {"shards": 3}, {"tx_count": 0}, {"scheme": "paxos"},
    {"he_backend": "bfv"}, {"slots": 1000}, {"block_size_limit": 0.5}, {"warmup_fraction": 1.0},
    {"liquidity_fault_fraction": 2.0},
])
def test_invalid_config_rejected(change):
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(**change)


def test_unknown_field_rejected():
    with pytest.raises(ConfigInvalid):
        config_from_mapping({"skewness": 10, "colour": "red"})


def test_yaml_and_json_configs_load(tmp_path):
    (tmp_path / "c.yaml").write_text("skewness: 30\nscheme: occ\n")
    (tmp_path / "c.json").write_text(json.dumps({"skewness": 30, "scheme": "occ"}))
    assert load_config(tmp_path / "c.yaml") == load_config(tmp_path / "c.json") == ExperimentConfig(
        skewness=30, scheme="occ")
    (tmp_path / "bad.yaml").write_text("skewness: [1,\n")
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "bad.yaml")


def test_derived_timing_defaults():
    cfg = ExperimentConfig()
    assert cfg.lock_hold == 4 * cfg.net_delay_ms + 2 * cfg.block_commit_ms
    assert cfg.backoff == cfg.batch_timeout
    assert cfg.txs_per_block == 40


# ---------------------------------------------------------------- workload
def hot_share(f: float, n: int = 10_000, group: int = 20) -> tuple[float, float]:
    cfg = ExperimentConfig(skewness=f, tx_count=n, intermediary_group_size=group)
    items = generate_workload(cfg)
    hot = Topology.from_config(cfg).hot
    return sum(w.intermediary == hot for w in items) / n, f / 100 + (1 - f / 100) / group


def test_full_skew_sends_everything_through_hot():
    share, _ = hot_share(100)
    assert share == 1.0


@pytest.mark.parametrize("f", [0, 30, 70])
def test_hot_share_matches_binomial(f):
    n = 10_000
    share, p = hot_share(f, n)
    assert abs(share - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_workload_is_deterministic_and_paired():
    cfg = small(tx_count=500, rng_seed=4)
    a, b = generate_workload(cfg), generate_workload(cfg)
    assert a == b
    assert a != generate_workload(cfg.replace(rng_seed=5))
    topo = Topology.from_config(cfg)
    for w in a:
        assert w.target == topo.partner(w.source)
        assert w.receiver in topo.receivers_on(w.target)
        assert cfg.amount_min <= w.amount <= cfg.amount_max
    assert [w.send_ms for w in a] == sorted(w.send_ms for w in a)


def test_trace_amounts_cycle(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("amount\n1.5\n2.25\n\n3\n")
    assert load_trace(path) == [Decimal("1.5"), Decimal("2.25"), Decimal("3")]
    items = sorted(generate_workload(small(tx_count=7, trace_file=str(path))), key=lambda w: w.seq)
    assert [w.amount for w in items] == [Decimal(x) for x in ("1.5", "2.25", "3", "1.5", "2.25", "3", "1.5")]


@pytest.mark.parametrize("text", ["amount\nabc\n", "amount\n-2\n", "amount\n", "1\nnan\n"])
def test_bad_trace_rejected(tmp_path, text):
    path = tmp_path / "t.csv"
    path.write_text(text)
    with pytest.raises(BadTrace):
        load_trace(path)


def test_missing_trace_rejected(tmp_path):
    with pytest.raises(BadTrace):
        load_trace(tmp_path / "none.csv")


# ---------------------------------------------------------------- DES and nodes
def test_event_loop_orders_by_time_then_schedule():
    loop, seen = EventLoop(), []
    loop.at(5, lambda: seen.append("b"))
    loop.at(1, lambda: seen.append("a"))
    loop.at(5, lambda: seen.append("c"))
    loop.at(3, lambda: loop.after(2, lambda: seen.append("d")))
    loop.run()
    assert seen == ["a", "b", "c", "d"] and loop.now == 5


def test_network_delay_is_bounded_and_seeded():
    import random

    a = NetworkModel(5, 1, random.Random(1))
    b = NetworkModel(5, 1, random.Random(1))
    xs = [a.sample() for _ in range(200)]
    assert xs == [b.sample() for _ in range(200)]
    assert all(4 <= x <= 6 for x in xs)


def test_node_cuts_on_timeout_and_charges_commit_time():
    loop = EventLoop()
    commits = []
    node = ShardNode(loop, "s0", None, 40, 2000, 50, 2.5,
                     lambda block, verdicts: commits.append((loop.now, len(block.txs))),
                     validator=lambda block: [Verdict.VALID] * len(block.txs))
    for i in range(3):
        loop.at(i * 10, lambda i=i: node.deliver(EndorsedTx(f"t{i}", None, MB, loop.now)))
    loop.run()
    assert commits == [(2000 + 50 + 3 * 2.5, 3)]


def test_node_cuts_on_overflow_and_queues_commits():
    loop = EventLoop()
    commits = []
    node = ShardNode(loop, "s0", None, 2, 2000, 50, 0,
                     lambda block, verdicts: commits.append((loop.now, [t.tx_id for t in block.txs])),
                     validator=lambda block: [Verdict.VALID] * len(block.txs))
    loop.at(0, lambda: [node.deliver(EndorsedTx(f"t{i}", None, MB, 0)) for i in range(5)])
    loop.at(10, lambda: node.charge(30))  # system work pushes the second block back
    loop.run()
    assert commits == [(50, ["t0", "t1"]), (130, ["t2", "t3"]), (2050, ["t4"])]


# ---------------------------------------------------------------- metrics and export
def test_percentile_interpolates():
    assert percentile([], 50) == 0.0
    assert percentile([1.0, 2.0, 3.0, 4.0], 50) == 2.5
    assert percentile([1.0, 2.0, 3.0, 4.0], 100) == 4.0


def test_single_report_csv_has_header_and_one_row(tmp_path):
    report = run_experiment(small())
    path = export_results(report, tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert len(lines) == 2 and lines[1].startswith("hicocs,10,40,100,")


def test_export_is_byte_stable(tmp_path):
    reports = [run_experiment(small()), run_experiment(small(scheme="occ"))]
    a = export_results(reports, tmp_path / "a.json", "json").read_bytes()
    b = export_results([run_experiment(small()), run_experiment(small(scheme="occ"))],
                       tmp_path / "b.json", "json").read_bytes()
    assert a == b
    assert [r["scheme"] for r in json.loads(a)] == ["hicocs", "occ"]


def test_export_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ExportError) as exc:
        export_results(run_experiment(small(tx_count=5)), blocker / "r.csv")
    assert exc.value.code == "IO_ERROR"


# ---------------------------------------------------------------- experiments
@pytest.mark.parametrize("scheme", SCHEMES)
def test_single_transfer_always_succeeds(scheme):
    report = run_experiment(small(scheme=scheme, tx_count=1))
    assert report.tsr == 100.0 and report.retries == 0 and report.mvcc_conflicts == 0
    assert report.completed == 1


@pytest.mark.parametrize("scheme", SCHEMES)
def test_every_transfer_reaches_a_terminal_state(scheme):
    art = simulate_experiment(small(scheme=scheme, skewness=60))
    assert art.collector.all_terminal
    assert art.report.completed + art.report.failed == 100
    assert art.report.latency["p50"] <= art.report.latency["p99"]


def test_hicocs_has_no_conflicts_on_the_hot_intermediary():
    report = run_experiment(small(skewness=90))
    assert report.tsr == 100.0 and report.mvcc_conflicts == 0


def test_vanilla_conflicts_under_skew():
    report = run_experiment(small(scheme="vanilla", skewness=90, concurrent_clients=60, tx_count=300))
    assert report.mvcc_conflicts > 0


def test_hicocs_resource_counters():
    report = run_experiment(small())
    proxy = report.cpu_mem_proxy
    assert set(proxy) == {"entries_scanned", "cipher_ops", "peak_pool_bytes", "system_txs"}
    assert all(v > 0 for v in proxy.values())
    assert report.pool_size_series and report.query_time_series


def test_fault_run_conserves_value():
    art = simulate_experiment(fault_config(3), check_conservation=True)
    assert len({tuple(sorted(t.items())) for _, t in art.conservation}) == 1
    assert set(art.report.failures) <= {"INSUFFICIENT_BALANCE", "LIQUIDITY_SHORTFALL", "MVCC_CONFLICT"}
    assert art.report.failed > 0


def test_runs_are_deterministic():
    a = render_csv([run_experiment(small(scheme=s, skewness=50)) for s in SCHEMES])
    b = render_csv([run_experiment(small(scheme=s, skewness=50)) for s in SCHEMES])
    assert a == b


def test_singleton_sweep_equals_run():
    cfg = small(skewness=30)
    (swept,) = run_sweep(cfg, "skewness", [30])
    assert render_csv([swept]) == render_csv([run_experiment(cfg)])


def test_sweep_orders_schemes_then_values():
    reports = run_sweep(small(tx_count=20), "block_size", [10, 20], ["occ", "hicocs"])
    assert [(r.scheme, r.block_mb) for r in reports] == [("occ", 10), ("occ", 20), ("hicocs", 10), ("hicocs", 20)]
    assert len(render_csv(reports).splitlines()) == 5


@pytest.mark.parametrize("args", [("bogus", [1]), ("skewness", []), ("skewness", [150])])
def test_bad_sweeps_rejected(args):
    with pytest.raises(ConfigInvalid):
        run_sweep(small(), *args)


def test_unknown_sweep_scheme_rejected():
    with pytest.raises(ConfigInvalid):
        run_sweep(small(), "skewness", [10], ["paxos"])


# ---------------------------------------------------------------- CLI
def write_config(tmp_path, **kw):
    path = tmp_path / "cfg.yaml"
    path.write_text("".join(f"{k}: {v}\n" for k, v in {**SMALL, **kw}.items()))
    return str(path)


def test_cli_run_writes_results(tmp_path, capsys):
    code = main(["run", "--config", write_config(tmp_path), "--scheme", "occ", "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    text = (tmp_path / "o" / "results.csv").read_text()
    assert text.splitlines()[1].startswith("occ,")
    assert "tsr=" in capsys.readouterr().out


def test_cli_sweep_writes_one_row_per_point(tmp_path):
    code = main(["sweep", "--config", write_config(tmp_path, tx_count=20), "--axis", "skewness",
                 "--values", "10,50", "--schemes", "hicocs,vanilla", "--out", str(tmp_path), "--format", "json"])
    assert code == EXIT_OK
    rows = json.loads((tmp_path / "sweep_skewness.json").read_text())
    assert [(r["scheme"], r["f"]) for r in rows] == [("hicocs", 10), ("hicocs", 50), ("vanilla", 10), ("vanilla", 50)]


def test_cli_invalid_config_exit_code(tmp_path, capsys):
    assert main(["run", "--config", write_config(tmp_path, skewness=150), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "CONFIG_INVALID" in capsys.readouterr().err
    assert main(["sweep", "--config", write_config(tmp_path), "--axis", "skewness", "--values", "a,b",
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_cli_other_errors_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, trace_file=str(tmp_path / "missing.csv"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == EXIT_ERROR
    assert "BAD_TRACE" in capsys.readouterr().err
