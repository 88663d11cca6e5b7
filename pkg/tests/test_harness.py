import json
from pathlib import Path

import pytest

from dropstream.harness import cli
from dropstream.harness.config import ExperimentConfig, Phase, dumps, load, loads, save, single_stream
from dropstream.harness.phases import (
    max_lossless_pause, payload_for_size, phase_fault_oracle, phase_lossless_rate, phase_max_rate, rank_results,
    reduce_rates, sweep_sizes,
)
from dropstream.harness.runner import run_streams
from dropstream.sender import StopCondition
from dropstream.topology import ConfigError
from dropstream.transport import RAW, FaultPlan, HostCostModel

PRESETS = sorted((Path(__file__).parent.parent / "presets").glob("*.cfg"))


@pytest.mark.parametrize("path", PRESETS, ids=lambda p: p.name)
def test_presets_load_and_round_trip(path):
    cfg = load(path)
    cfg.validate()
    assert loads(dumps(cfg)) == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        loads("phase: soak\nstreams: []\nbogus: 1\n")


def test_streams_template_and_overrides():
    cfg = loads("""
phase: soak
streams: {count: 3, port_base: 9100, template: {generators: [{block_size: 2048000, packet_size: 2000}]}}
stop: {packets: 10}
faults: {drop_prob: 1e-3, seed: 1}
""")
    assert [s.port for s in cfg.streams] == [9100, 9101, 9102]
    assert [s.stream_id for s in cfg.streams] == [0, 1, 2]
    assert cfg.faults.drop_prob == 1e-3
    o = cfg.with_overrides(seed=7, packets=99)
    assert o.seed == 7 and o.faults.seed == 7 and o.stop.packets == 99
    with pytest.raises(ConfigError):
        cfg.with_overrides(transport="udp")  # faults need the loopback
    cfg.faults = None
    assert cfg.with_overrides(transport="udp").transport == "udp"


def test_sweep_sizes():
    notices = []
    sizes = sweep_sizes(2048, notices)
    assert sizes == [64, 65, 128, 129, 192, 193, 256, 257, 320, 321, 384, 385, 448, 449, 512, 513, 1024, 1025, 2048]
    assert notices == ["size 2049 skipped: exceeds slot capacity 2048"]
    assert payload_for_size(2048, "datagram") == 2032
    assert payload_for_size(2048, RAW) == 1990


def _faulty(seed):
    cfg = ExperimentConfig(Phase.FAULT_ORACLE, [single_stream(64)], stop=StopCondition(packets=20000),
                           burst_size=512, faults=FaultPlan(0.01, 0.01, 0.01, 3, seed))
    r = run_streams(cfg, histogram=False)
    return [e.key for e in r.rx.reports[0].events], r.bytes_received


def test_same_seed_same_outcome():
    a, b, c = _faulty(3), _faulty(3), _faulty(4)
    assert a == b and a[0] and a != c


def test_max_lossless_pause_bisects():
    class R:
        def __init__(self, ok):
            self.events = 0 if ok else 1
            self.packets_received = self.packets_sent = 1
            self.host_dropped = 0

    calls = []

    def trial(p):
        calls.append(p)
        return R(p >= 300)

    pause, _ = max_lossless_pause(trial)
    assert pause == 300
    assert max_lossless_pause(lambda p: R(True))[0] == 0
    assert max_lossless_pause(lambda p: R(False), limit=1000)[0] is None


def test_rank_tie_break():
    entries = [{"loss_ratio": 0.0, "packet_rate": 5, "plan_index": 2},
               {"loss_ratio": 0.0, "packet_rate": 5, "plan_index": 1},
               {"loss_ratio": 0.0, "packet_rate": 6, "plan_index": 3},
               {"loss_ratio": 0.1, "packet_rate": 9, "plan_index": 0}]
    assert [e["plan_index"] for e in rank_results(entries)] == [3, 1, 2, 0]


def test_reduce_rates_alternates():
    class R:
        def __init__(self, ok):
            self.events = 0 if ok else 1
            self.packets_received = self.packets_sent = 1
            self.host_dropped = 0

    rates, _, history = reduce_rates(lambda r: R(sum(r) <= 14.0), [8.0, 8.0], step=0.5)
    assert rates == [7.0, 7.0]
    assert [h[0] for h in history][:3] == [[8.0, 8.0], [7.5, 8.0], [7.5, 7.5]]
    assert reduce_rates(lambda r: R(False), [1.0], step=0.5)[0] is None


def _sim(n, **params):
    # a fast line so that the host, not the wire, is the bottleneck
    streams = [single_stream(350, 350 * 1024, port=9000 + i, stream_id=i, line_rate=100e9) for i in range(n)]
    return ExperimentConfig(Phase.LOSSLESS_RATE, streams, stop=StopCondition(packets=5000), burst_size=64,
                            simulate=HostCostModel(), params=params)


def test_lossless_rate_on_cost_model():
    cost = HostCostModel()
    per_stream = cost.capacity_pps(350) / 2  # two streams share the host
    rep = phase_lossless_rate(_sim(2, per_stream_pps=per_stream, rate_fractions=[0.8, 1.2]))
    below, above = rep.rows
    assert below["rate_fraction"] == 0.8 and below["ratio"] == 1.0 and below["loss_events"] == 0
    assert above["ratio"] < 0.95
    assert rep.passed


def test_max_rate_rows_and_refusal():
    cfg = _sim(3)
    cfg.phase = Phase.MAX_RATE
    rep = phase_max_rate(cfg)
    assert [r["streams"] for r in rep.rows] == [1, 2, 3] and rep.passed
    cfg.streams = []
    with pytest.raises(ConfigError):
        phase_max_rate(cfg)


def test_fault_oracle_self_test():
    cfg = ExperimentConfig(Phase.FAULT_ORACLE, [single_stream(64)], stop=StopCondition(packets=20000),
                           burst_size=1024, faults=FaultPlan(1e-3, 1e-3, 1e-3, 3), params={"seeds": 3})
    rep = phase_fault_oracle(cfg)
    assert rep.passed and len(rep.rows) == 4
    assert rep.checks["corrupted expectation is caught"]
    assert sum(r["dropped"] for r in rep.rows) > 0


def test_cli_exit_codes(tmp_path, capsys):
    out = tmp_path / "fo"
    assert cli.main(["fault-oracle", "--packets", "5000", "--seed", "2", "--out", str(out)]) == 0
    assert (out / "report.json").exists() and (out / "config.cfg").exists()
    assert load(out / "config.cfg").seed == 2
    assert "PASS" in capsys.readouterr().out

    good = tmp_path / "soak.cfg"
    save(ExperimentConfig(Phase.SOAK, [single_stream(2000, 2048000)], stop=StopCondition(packets=50),
                          params={"render": False}), good)
    assert cli.main(["soak", "--config", str(good), "--out", str(tmp_path / "s")]) == 0

    assert cli.main(["max-rate", "--config", str(good)]) == 2  # wrong phase
    garbage = tmp_path / "g.cfg"
    garbage.write_text("phase: soak\nstreams: 5\n")
    assert cli.main(["soak", "--config", str(garbage)]) == 2


def test_cli_failing_check_returns_one(tmp_path):
    # one packet dropped on purpose: the soak's zero-event check must fail
    cfg = ExperimentConfig(Phase.SOAK, [single_stream(2000, 2048000)], stop=StopCondition(packets=50),
                           faults=FaultPlan(drop_ids=[(9000, 10)]), params={"render": False})
    p = save(cfg, tmp_path / "c.cfg")
    assert cli.main(["soak", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_plot(tmp_path):
    out = tmp_path / "fo"
    cli.main(["fault-oracle", "--packets", "2000", "--out", str(out)])
    img = cli.main(["plot", str(out / "report.json"), "--x", "offered", "--y", "received"])
    assert img == 0 and list(out.glob("*.png"))
    assert cli.main(["plot", str(tmp_path / "missing.json")]) == 2
