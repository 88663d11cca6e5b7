"""One send/receive run: wire up transport, sender threads and a receiver."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass

from ..audit import loss_upper_limit
from ..receiver import Receiver, ReceiverResult, RingConfig, StreamBinding
from ..sender import SendSummary, StopCondition, StreamConfig, StreamSender, run_virtual, send_stream
from ..topology import AssignmentPlan
from ..transport import (DATAGRAM, RAW, FaultPlan, GroundTruth, HostCostModel, LoopbackTransport,
                         RawSocketTransport, SimulatedHostTransport, UdpSocketSource, UdpSocketTransport,
                         inject_faults)
from .config import ExperimentConfig

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    sends: list[SendSummary]
    rx: ReceiverResult
    truth: GroundTruth | None
    window_s: float  # sending window: virtual schedule or wall clock
    host_dropped: int = 0  # packets refused by a simulated host

    @property
    def packets_sent(self) -> int:
        return sum(s.packets for s in self.sends)

    @property
    def packets_received(self) -> int:
        return self.rx.stats.packets

    @property
    def bytes_received(self) -> int:
        return sum(s.bytes for s in self.rx.stats.streams.values())

    @property
    def complete(self) -> bool:
        return all(s.complete for s in self.sends)

    @property
    def events(self) -> int:
        return sum(r.event_count for r in self.rx.reports.values())

    @property
    def missing(self) -> int:
        return sum(r.total_missing for r in self.rx.reports.values())

    @property
    def packet_rate(self) -> float:
        return self.packets_received / self.window_s if self.window_s > 0 else 0.0

    @property
    def data_rate(self) -> float:
        return 8 * self.bytes_received / self.window_s if self.window_s > 0 else 0.0

    @property
    def offered_rate(self) -> float:
        return self.packets_sent / self.window_s if self.window_s > 0 else 0.0

    @property
    def loss_ratio(self) -> float:
        # without injected duplicates the send/receive difference also covers tail losses
        lost = self.missing if self.truth is not None else max(self.packets_sent - self.packets_received, self.missing)
        total = self.packets_received + lost
        return lost / total if total else 0.0

    @property
    def upper_limit(self) -> float | None:
        return loss_upper_limit(self.packets_received, self.missing)

    def row(self) -> dict:
        return {
            "packets_sent": self.packets_sent,
            "packets_received": self.packets_received,
            "bytes_received": self.bytes_received,
            "window_s": self.window_s,
            "packet_rate": self.packet_rate,
            "data_rate": self.data_rate,
            "loss_events": self.events,
            "loss_ratio": self.loss_ratio,
            "upper_limit": self.upper_limit,
        }

    def audit_snapshot(self, max_events: int = 100) -> dict:
        return {str(sid): r.to_dict(max_events=max_events) for sid, r in self.rx.reports.items()}


def run_streams(cfg: ExperimentConfig, streams: list[StreamConfig] | None = None,
                stop: StopCondition | None = None, placement: AssignmentPlan | None = None,
                faults: FaultPlan | None = None, simulate: HostCostModel | None = None,
                histogram: bool = True, stats_path=None, stop_on_event: bool = False,
                ring: RingConfig | None = None, expected_first_ids: bool = True) -> RunResult:
    """Run ``streams`` (default: all configured) once and collect everything.

    With ``simulate`` the senders run on a virtual clock against a
    :class:`SimulatedHostTransport`; otherwise they pace in real time.
    """
    streams = list(cfg.streams if streams is None else streams)
    stop = stop or cfg.stop
    placement = placement if placement is not None else cfg.placement
    faults = faults if faults is not None else cfg.faults
    simulate = simulate if simulate is not None else cfg.simulate
    bindings = [StreamBinding(s.port, s.stream_id, s.initial_packet_id if expected_first_ids else None)
                for s in streams]
    rx_kw = dict(ring=ring or cfg.ring, placement=placement, core_map=cfg.core_map, ccx=cfg.ccx,
                 layout=cfg.layout, histogram=histogram, stats_path=stats_path, stop_on_event=stop_on_event)

    if simulate is not None:
        return _run_simulated(cfg, streams, stop, simulate, bindings, rx_kw)
    if cfg.transport == "loopback":
        lb = LoopbackTransport(maxsize=max(8, 2 * len(streams)), kind=cfg.frame_mode)
        tx = inject_faults(lb, faults) if faults is not None else lb
        return _run_threads(cfg, streams, stop, tx, tx, bindings, rx_kw, cfg.frame_mode,
                            getattr(tx, "truth", None))
    if cfg.transport == "udp":
        source = UdpSocketSource([s.port for s in streams], bind=cfg.params.get("bind", "127.0.0.1"))
        tx = UdpSocketTransport(streams[0].address)
        try:
            return _run_threads(cfg, streams, stop, tx, source, bindings, rx_kw, DATAGRAM, None)
        finally:
            source.close()
    if cfg.transport == "raw":
        source = RawSocketTransport(cfg.interface)
        tx = RawSocketTransport(cfg.params.get("tx_interface", cfg.interface))
        try:
            return _run_threads(cfg, streams, stop, tx, source, bindings, rx_kw, RAW, None)
        finally:
            source.close()
    raise ValueError(f"unknown transport {cfg.transport!r}")


def _run_threads(cfg, streams, stop, tx, source, bindings, rx_kw, frame_mode, truth) -> RunResult:
    receiver = Receiver(bindings, source, **rx_kw)
    sends: dict[int, SendSummary] = {}
    failures: list[BaseException] = []

    def send_one(s: StreamConfig):
        try:
            sends[s.stream_id] = send_stream(s, tx, stop, clock="real", burst_size=cfg.burst_size,
                                             frame_mode=frame_mode)
        except BaseException as exc:  # configuration errors surface in the caller
            failures.append(exc)

    threads = [threading.Thread(target=send_one, args=(s,), name=f"sender-{s.stream_id}", daemon=True)
               for s in streams]

    def finish():
        for t in threads:
            t.join()
        if hasattr(source, "finish") and source is not tx:
            source.finish()
        tx.close()

    t0 = time.monotonic()
    for t in threads:
        t.start()
    closer = threading.Thread(target=finish, name="closer", daemon=True)
    closer.start()
    try:
        rx = receiver.run()
    finally:
        receiver.request_stop()
        tx.close()
    closer.join()
    if failures:
        raise failures[0]
    window = max((s.duration_s for s in sends.values()), default=time.monotonic() - t0)
    return RunResult([sends[s.stream_id] for s in streams], rx, truth, window)


def _run_simulated(cfg, streams, stop, cost, bindings, rx_kw) -> RunResult:
    inner = LoopbackTransport(maxsize=64)
    tx = SimulatedHostTransport(inner, cost)
    senders = [StreamSender(s, cfg.burst_size, DATAGRAM) for s in streams]
    receiver = Receiver(bindings, tx, **rx_kw)
    out: list = []
    failures: list[BaseException] = []

    def drive():
        try:
            out.extend(run_virtual(senders, tx, stop))
        except BaseException as exc:
            failures.append(exc)
        finally:
            tx.close()

    t = threading.Thread(target=drive, name="virtual-senders", daemon=True)
    t.start()
    try:
        rx = receiver.run()
    finally:
        tx.close()
    t.join()
    if failures:
        raise failures[0]
    window = max((s.t_ns for s in senders), default=0.0) / 1e9
    return RunResult(out, rx, None, window, host_dropped=tx.dropped)
