"""Measurement phases.

Each phase takes an :class:`ExperimentConfig`, performs one or more runs and
returns a :class:`PhaseReport` whose ``checks`` decide the exit status.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import replace
from pathlib import Path

from ..audit import diff_events, loss_upper_limit, reconcile, reference_events, replay_delivered_ids
from ..frames import UDP_PAYLOAD_OFFSET
from ..patterns import Counting16, wire_time_ns
from ..protocol import HEADER_SIZE, MAX_SLOT_SIZE
from ..sender import StopCondition, StreamConfig
from ..topology import ConfigError, enumerate_assignments, validate
from ..transport import RAW, FaultPlan
from ..verify import check_sum, check_uniform, render_histogram
from .config import ExperimentConfig, Phase
from .report import PhaseReport
from .runner import RunResult, run_streams

log = logging.getLogger(__name__)

SWEEP_BASE_SIZES = tuple(range(64, 513, 64)) + (1024, 2048)
DEFAULT_RATE_STEP = 0.5e9  # bits/s per reduction step in the two-stream search


def _retune(streams: list[StreamConfig], **changes) -> list[StreamConfig]:
    """Copies of ``streams`` with every generator updated by ``changes``."""
    out = []
    for s in streams:
        s = copy.deepcopy(s)
        s.generators = [replace(g, **changes) for g in s.generators]
        out.append(s)
    return out


def _lossless(r: RunResult) -> bool:
    return r.events == 0 and r.packets_received == r.packets_sent and r.host_dropped == 0


def _stop_or(cfg: ExperimentConfig, packets: int) -> StopCondition:
    s = cfg.stop
    if s.packets is None and s.blocks is None and s.duration_s is None:
        return StopCondition(packets=packets)
    return s


# -- max rate -----------------------------------------------------------------

def phase_max_rate(cfg: ExperimentConfig) -> PhaseReport:
    """Total received packet rate for 1..N active streams; losses are not held against a step."""
    if not cfg.streams:
        raise ConfigError("max-rate needs at least one stream")
    n_max = int(cfg.params.get("max_streams", len(cfg.streams)))
    if not 1 <= n_max <= len(cfg.streams):
        raise ConfigError(f"max_streams must be in 1..{len(cfg.streams)}")
    rep = PhaseReport(Phase.MAX_RATE.value)
    stop = _stop_or(cfg, 20000)
    complete = True
    for n in range(1, n_max + 1):
        r = run_streams(cfg, cfg.streams[:n], stop=stop)
        complete &= r.complete
        rep.add_row({"streams": n, "offered_rate": r.offered_rate, **r.row()}, r.audit_snapshot())
        log.info("max-rate: %d streams -> %.3f Mp/s", n, r.packet_rate / 1e6)
    rep.checks["all steps ran"] = complete and len(rep.rows) == n_max
    rates = [row["packet_rate"] for row in rep.rows]
    rep.summary = {"peak_packet_rate": max(rates), "peak_streams": rates.index(max(rates)) + 1}
    return rep


# -- lossless rate -------------------------------------------------------------

def phase_lossless_rate(cfg: ExperimentConfig) -> PhaseReport:
    """Sweep the pause from long to short and compare measured with expected rate.

    ``params.per_stream_pps`` is the per-stream ceiling, and
    ``params.rate_fractions`` the fractions of it to try (the largest should
    overshoot the expected ceiling by about 10 %). The expected rate counts
    the packets the senders offered in the sending window, the measured one
    the packets that arrived in the same window.
    """
    if not cfg.streams:
        raise ConfigError("lossless-rate needs at least one stream")
    pps = float(cfg.params.get("per_stream_pps", 3.4e6))
    fractions = cfg.params.get("rate_fractions", [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1])
    rep = PhaseReport(Phase.LOSSLESS_RATE.value)
    stop = _stop_or(cfg, 20000)
    steps = []
    for f in fractions:
        g = cfg.streams[0].generators[0]
        period = 1e9 / (pps * float(f))
        pause = max(0, round(period - wire_time_ns(g.packet_size, g.line_rate)))
        steps.append((pause, float(f)))
    steps.sort(key=lambda t: -t[0])  # long pauses first
    onset = None
    complete = True
    for pause, f in steps:
        streams = _retune(cfg.streams, pause_ns=pause, target_rate=None)
        r = run_streams(cfg, streams, stop=stop)
        complete &= r.complete
        expected = r.offered_rate
        ratio = r.packet_rate / expected if expected else 0.0
        if onset is None and not _lossless(r):
            onset = pause
        rep.add_row({"pause_ns": pause, "rate_fraction": f, "target_total_pps": pps * f * len(streams),
                     "expected_rate": expected, "ratio": ratio, **r.row()}, r.audit_snapshot())
    rep.summary = {"loss_onset_pause_ns": onset, "streams": len(cfg.streams), "per_stream_pps": pps}
    rep.checks["all steps ran"] = complete
    rep.checks["longest pause is lossless"] = bool(rep.rows) and rep.rows[0]["ratio"] == 1.0 and \
        rep.rows[0]["loss_events"] == 0
    return rep


# -- size sweep ------------------------------------------------------------------

def sweep_sizes(capacity: int = MAX_SLOT_SIZE, notices: list[str] | None = None) -> list[int]:
    """Sizes 64..512 in steps of 64, plus 1024 and 2048, each also one byte larger.

    Sizes above ``capacity`` are dropped; a notice is appended for each.
    """
    sizes = sorted(set(SWEEP_BASE_SIZES) | {s + 1 for s in SWEEP_BASE_SIZES})
    kept = [s for s in sizes if s <= capacity]
    if notices is not None:
        notices += [f"size {s} skipped: exceeds slot capacity {capacity}" for s in sizes if s > capacity]
    return kept


def payload_for_size(size: int, frame_mode: str) -> int:
    """Payload bytes that make one packet occupy ``size`` bytes of a slot."""
    overhead = UDP_PAYLOAD_OFFSET + HEADER_SIZE if frame_mode == RAW else HEADER_SIZE
    return size - overhead


def max_lossless_pause(trial, start: int = 64, limit: int = 10**8):
    """Smallest integer pause (ns) for which ``trial(pause)`` is lossless.

    Returns ``(pause, result)``, or ``(None, last_result)`` when even
    ``limit`` loses packets. Assumes loss does not reappear at longer pauses.
    """
    r = trial(0)
    if _lossless(r):
        return 0, r
    lo, hi = 0, start
    while True:
        r_hi = trial(hi)
        if _lossless(r_hi):
            break
        lo, hi = hi, hi * 2
        if hi > limit:
            return None, r_hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        r = trial(mid)
        if _lossless(r):
            hi, r_hi = mid, r
        else:
            lo = mid
    return hi, r_hi


def phase_size_sweep(cfg: ExperimentConfig) -> PhaseReport:
    """Maximum lossless packet rate per slot occupancy size."""
    if not cfg.streams:
        raise ConfigError("size-sweep needs at least one stream")
    rep = PhaseReport(Phase.SIZE_SWEEP.value)
    mode = RAW if cfg.frame_mode == RAW or cfg.transport == "raw" else "datagram"
    sizes = cfg.params.get("sizes") or sweep_sizes(cfg.ring.slot_size, rep.notes)
    n_streams = int(cfg.params.get("streams", 1))
    stop = _stop_or(cfg, 20000)
    for size in sizes:
        payload = payload_for_size(size, mode)
        if payload < 1 or size > cfg.ring.slot_size:
            rep.note(f"size {size} skipped: no room for a payload")
            continue
        streams = _retune(cfg.streams[:n_streams], packet_size=payload, block_size=payload * 1024, target_rate=None)

        def trial(pause, streams=streams):
            return run_streams(cfg, _retune(streams, pause_ns=pause), stop=stop, histogram=False)

        pause, r = max_lossless_pause(trial)
        rep.add_row({"size": size, "payload": payload, "pause_ns": pause, **r.row()}, r.audit_snapshot(10))
        log.info("size %d: %.3f Mp/s lossless (pause %s ns)", size, r.packet_rate / 1e6, pause)
    listed = [row["size"] for row in rep.rows]
    rep.checks["row for every size"] = listed == [s for s in sizes if payload_for_size(s, mode) >= 1]
    rates = {row["size"]: row["packet_rate"] for row in rep.rows}
    steps = {s: rates[s] > rates[s + 1] for s in SWEEP_BASE_SIZES if s in rates and s + 1 in rates}
    rep.summary = {"step_down_at": {str(s): ok for s, ok in steps.items()}}
    if cfg.simulate is not None:
        rep.checks["rate drops from s to s+1"] = all(steps.values())
    return rep


# -- assignment search -------------------------------------------------------------

def rank_results(entries: list[dict]) -> list[dict]:
    """Order by loss ratio, then by higher packet rate, then by plan index."""
    return sorted(entries, key=lambda e: (e["loss_ratio"], -e["packet_rate"], e["plan_index"]))


def reduce_rates(run, rates: list[float], step: float = DEFAULT_RATE_STEP, floor: float = 0.0,
                 max_steps: int = 40):
    """Lower the stream rates alternately by ``step`` until ``run(rates)`` is lossless.

    Returns ``(rates, result, history)``; ``rates`` is None if no lossless
    setting was found within ``max_steps``.
    """
    rates = list(rates)
    history = []
    k = 0
    for _ in range(max_steps + 1):
        r = run(rates)
        history.append((list(rates), r))
        if _lossless(r):
            return rates, r, history
        i = k % len(rates)
        if rates[i] - step <= floor:
            i = max(range(len(rates)), key=lambda j: rates[j])
            if rates[i] - step <= floor:
                break
        rates[i] -= step
        k += 1
    return None, history[-1][1], history


def phase_assignment_search(cfg: ExperimentConfig) -> PhaseReport:
    """Run every placement of each round and rank them by loss, then rate.

    ``params.rounds`` lists ``{streams: n, rule_w: bool}``; the default is
    one stream without pruning followed by two streams with Rule W.
    """
    rounds = cfg.params.get("rounds", [{"streams": 1, "rule_w": False}, {"streams": 2, "rule_w": True}])
    rep = PhaseReport(Phase.ASSIGNMENT_SEARCH.value)
    stop = _stop_or(cfg, 20000)
    complete = True
    counts_ok = True
    best = None
    for rnd, spec in enumerate(rounds):
        n = int(spec["streams"])
        if n > len(cfg.streams):
            raise ConfigError(f"round {rnd} needs {n} streams, config has {len(cfg.streams)}")
        plans = enumerate_assignments(n, bool(spec.get("rule_w", False)), cfg.layout)
        entries = []
        for i, plan in enumerate(plans):
            r = run_streams(cfg, cfg.streams[:n], stop=stop, placement=plan)
            complete &= r.complete
            entries.append({"round": rnd, "plan_index": i, "receiver": plan.receiver,
                            "workers": " ".join(map(str, plan.workers)),
                            "rule_w_ok": not validate(plan, cfg.layout), **r.row(),
                            "_plan": plan, "_audit": r.audit_snapshot(10)})
        counts_ok &= len(entries) == len(plans)
        ranked = rank_results(entries)
        for rank, e in enumerate(ranked):
            e["rank"] = rank
        for e in entries:
            rep.add_row({k: v for k, v in e.items() if not k.startswith("_")}, e["_audit"])
        if ranked:
            best = ranked[0]
            rep.note(f"round {rnd}: best plan {best['_plan']} (loss {best['loss_ratio']:.3g}, "
                     f"{best['packet_rate'] / 1e6:.3f} Mp/s)")
        ok = [e["loss_ratio"] for e in entries if e["rule_w_ok"]]
        bad = [e["loss_ratio"] for e in entries if not e["rule_w_ok"]]
        if ok and bad:
            rep.note(f"round {rnd}: worst loss with Rule W {max(ok):.3g}, best loss without it {min(bad):.3g}")
    rep.checks["all plans ran"] = complete and counts_ok

    step = cfg.params.get("rate_step")
    if step and best is not None and best["loss_ratio"] > 0:
        plan = best["_plan"]
        n = len(plan.workers)
        start = [float(g.target_rate or 0) for s in cfg.streams[:n] for g in s.generators[:1]]
        if all(start):
            def run(rates):
                streams = [_retune([s], target_rate=rt)[0] for s, rt in zip(cfg.streams[:n], rates)]
                return run_streams(cfg, streams, stop=stop, placement=plan)
            rates, r, history = reduce_rates(run, start, float(step))
            rep.summary["reduced_rates"] = rates
            rep.summary["reduction_steps"] = [[h[0], h[1].loss_ratio] for h in history]
        else:
            rep.note("rate reduction skipped: streams have no target_rate")
    if best is not None:
        rep.summary["best_plan"] = best["_plan"].to_dict()
    return rep


# -- soak ----------------------------------------------------------------------------

def phase_soak(cfg: ExperimentConfig) -> PhaseReport:
    """Long lossless transfer with identifier audit and histogram checks per stream."""
    if not cfg.streams:
        raise ConfigError("soak needs at least one stream")
    for s in cfg.streams:
        for g in s.generators:
            if not isinstance(g.pattern, Counting16):
                raise ConfigError(f"stream {s.stream_id}: soak needs the counting16 pattern")
            g.validate(verification=True)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats_path = out / "stats.jsonl" if cfg.params.get("stats_export", True) else None
    if stats_path is not None and stats_path.exists():
        stats_path.unlink()
    r = run_streams(cfg, stop=_stop_or(cfg, 100000), stats_path=stats_path,
                    stop_on_event=bool(cfg.params.get("abort_on_event", False)))
    rep = PhaseReport(Phase.SOAK.value)
    all_uniform = all_sum = True
    sent = {s.stream_id: s for s in r.sends}
    for sid, st in r.rx.stats.streams.items():
        a = r.rx.reports[sid]
        h = r.rx.histograms[sid]
        u = check_uniform(h)
        summed = check_sum(h, st.bytes)
        uniform = u.passed and u.areas <= 2
        all_uniform &= uniform
        all_sum &= summed
        if cfg.params.get("render", True):
            render_histogram(h, out, sid)
        rep.add_row({
            "stream_id": sid, "packets": st.packets, "bytes": st.bytes, "terabytes": st.bytes / 1e12,
            "packets_sent": sent[sid].packets if sid in sent else None,
            "events": a.event_count, "upper_limit": a.loss_ratio,
            "spread": u.spread, "areas": u.areas, "contiguous": u.contiguous,
            "uniform": uniform, "sum_check": summed,
        }, {str(sid): a.to_dict(max_events=100)})
    rep.summary = {
        "packets": r.packets_received, "bytes": r.bytes_received, "window_s": r.window_s,
        "packet_rate": r.packet_rate, "data_rate": r.data_rate,
        "upper_limit": loss_upper_limit(r.packets_received, r.missing),
        "stats": r.rx.stats.to_dict(),
    }
    rep.checks["zero audit events"] = r.events == 0
    rep.checks["received == sent"] = r.packets_received == r.packets_sent
    rep.checks["histogram spread <= 1, contiguous"] = all_uniform
    rep.checks["histogram sum == bytes / 2"] = all_sum
    rep.checks["senders complete"] = r.complete
    return rep


# -- fault oracle ----------------------------------------------------------------------

def forced_mismatch_detected(report, truth, port: int, expected_first_id: int | None) -> bool:
    """Corrupt one expected event and confirm the comparison notices."""
    expected = reference_events(replay_delivered_ids(truth, port), expected_first_id)
    if expected:
        kind, value, pid, index = expected[0]
        expected[0] = (kind, value + 1, pid, index)
    else:
        expected.append(("missing", 1, 0, 0))
    return bool(diff_events(expected, [e.key for e in report.events]))


def phase_fault_oracle(cfg: ExperimentConfig) -> PhaseReport:
    """Seeded fault runs on the loopback; every audit must match the replay oracle."""
    if not cfg.streams:
        raise ConfigError("fault-oracle needs at least one stream")
    if cfg.transport != "loopback" or cfg.simulate is not None:
        raise ConfigError("fault-oracle runs on the loopback transport only")
    base = cfg.faults or FaultPlan(1e-3, 1e-3, 1e-3, 3)
    seeds = cfg.params.get("seeds", 100)
    seeds = list(range(cfg.seed, cfg.seed + int(seeds))) if isinstance(seeds, int) else [int(s) for s in seeds]
    stop = _stop_or(cfg, 10**6)
    rep = PhaseReport(Phase.FAULT_ORACLE.value)
    plans = [("clean", FaultPlan(seed=cfg.seed))] if cfg.params.get("clean_run", True) else []
    plans += [(str(s), replace(base, seed=s)) for s in seeds]
    total_diffs = 0
    self_test = None
    for label, plan in plans:
        r = run_streams(cfg, stop=stop, faults=plan, histogram=False)
        diffs = []
        for s in cfg.streams:
            diffs += reconcile(r.rx.reports[s.stream_id], r.truth, s.port, s.initial_packet_id)
        total_diffs += len(diffs)
        if self_test is None and label != "clean":
            s = cfg.streams[0]
            self_test = forced_mismatch_detected(r.rx.reports[s.stream_id], r.truth, s.port, s.initial_packet_id)
        t = r.truth
        rep.add_row({"seed": label, "offered": t.offered, "dropped": t.dropped, "duplicated": t.duplicated,
                     "reordered": t.reordered, "received": r.packets_received, "events": r.events,
                     "diffs": len(diffs)},
                    {"first_diffs": [[d.position, d.expected, d.actual] for d in diffs[:5]]})
        if diffs:
            log.warning("seed %s: %d mismatches, first %s", label, len(diffs), diffs[0])
    rep.summary = {"runs": len(plans), "total_diffs": total_diffs, "plan": base.to_dict()}
    rep.checks["zero diffs on every run"] = total_diffs == 0
    if self_test is not None:
        rep.checks["corrupted expectation is caught"] = self_test
    return rep


PHASES = {
    Phase.MAX_RATE: phase_max_rate,
    Phase.LOSSLESS_RATE: phase_lossless_rate,
    Phase.SIZE_SWEEP: phase_size_sweep,
    Phase.ASSIGNMENT_SEARCH: phase_assignment_search,
    Phase.SOAK: phase_soak,
    Phase.FAULT_ORACLE: phase_fault_oracle,
}


def run_phase(cfg: ExperimentConfig) -> PhaseReport:
    return PHASES[cfg.phase](cfg)
