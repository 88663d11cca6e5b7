"""Multi-threaded DROP receiver.

One management thread pulls bursts from the transport into free ring slots,
parses frames (raw mode), decodes DROP headers, demultiplexes by UDP
destination port, audits packet identifiers and keeps counters. Each stream
has a worker thread that histograms the payload words directly from the
slots and then returns them to the free pool.

When the ring runs out of free slots the newest packets are dropped and
counted, except on flow-controlled (lossless) links such as the loopback,
where intake waits for the workers instead.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audit import AuditReport, AuditState
from .frames import FRAME_ERROR_KINDS, parse_frames
from .protocol import DECODE_ERROR_KINDS, HEADER_SIZE, MAX_SLOT_SIZE, decode_header_rows
from .ring import INTAKE, WORKER, SlotRing
from .sender import StopCondition
from .topology import DEFAULT_LAYOUT, AssignmentPlan, CcxLayout, ConfigError, pin_current_thread, validate
from .transport import RAW, Transport
from .verify import WordHistogram

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StreamBinding:
    port: int
    stream_id: int
    expected_first_id: int | None = None


@dataclass
class StreamStats:
    stream_id: int
    port: int
    packets: int = 0
    bytes: int = 0
    decode_errors: Counter = field(default_factory=Counter)
    misrouted: int = 0
    checksum_failures: int = 0

    def to_dict(self) -> dict:
        return {"stream_id": self.stream_id, "port": self.port, "packets": self.packets, "bytes": self.bytes,
                "decode_errors": dict(self.decode_errors), "misrouted": self.misrouted,
                "checksum_failures": self.checksum_failures}


@dataclass
class RxStats:
    streams: dict[int, StreamStats] = field(default_factory=dict)
    frame_errors: Counter = field(default_factory=Counter)
    unbound: int = 0
    slots_exhausted: Counter = field(default_factory=Counter)  # queue index -> dropped packets
    exhaustion_events: int = 0
    intake_packets: int = 0

    @property
    def packets(self) -> int:
        return sum(s.packets for s in self.streams.values())

    def to_dict(self) -> dict:
        return {
            "packets": self.packets,
            "intake_packets": self.intake_packets,
            "streams": {str(k): v.to_dict() for k, v in self.streams.items()},
            "frame_errors": dict(self.frame_errors),
            "unbound": self.unbound,
            "slots_exhausted": {str(k): v for k, v in self.slots_exhausted.items()},
            "exhaustion_events": self.exhaustion_events,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class Demux:
    """Destination-port routing with a stream-id cross-check."""

    def __init__(self, bindings: list[StreamBinding], stats: RxStats | None = None):
        self.by_port: dict[int, StreamBinding] = {}
        for b in bindings:
            if b.port in self.by_port:
                raise ConfigError(f"port {b.port} bound twice")
            self.by_port[b.port] = b
        ids = [b.stream_id for b in bindings]
        if len(set(ids)) != len(ids):
            raise ConfigError("stream ids must be unique across bindings")
        self.stats = stats or RxStats()
        for b in bindings:
            self.stats.streams.setdefault(b.stream_id, StreamStats(b.stream_id, b.port))

    def route(self, dst_port: int, stream_id: int) -> StreamBinding | None:
        b = self.by_port.get(dst_port)
        if b is None:
            self.stats.unbound += 1
            return None
        if b.stream_id != stream_id:
            self.stats.streams[b.stream_id].misrouted += 1
            return None
        return b


def demux(dst_port: int, stream_id: int, bindings: Demux) -> StreamBinding | None:
    return bindings.route(dst_port, stream_id)


@dataclass
class RingConfig:
    slot_count: int = 4096
    slot_size: int = MAX_SLOT_SIZE

    def to_dict(self):
        return {"slot_count": self.slot_count, "slot_size": self.slot_size}


@dataclass
class ReceiverResult:
    stats: RxStats
    reports: dict[int, AuditReport]
    histograms: dict[int, WordHistogram]
    duration_s: float
    census: dict[str, int]

    @property
    def packet_rate(self) -> float:
        return self.stats.packets / self.duration_s if self.duration_s > 0 else 0.0


class Receiver:
    def __init__(self, bindings: list[StreamBinding], source: Transport, ring: RingConfig | SlotRing | None = None,
                 placement: AssignmentPlan | None = None, core_map: dict[int, list[int]] | None = None,
                 ccx: int = 0, layout: CcxLayout = DEFAULT_LAYOUT, big_endian: bool = False,
                 histogram: bool = True, stats_path=None, stats_interval: float = 1.0,
                 stop_on_event: bool = False, require_udp_checksum: bool = False):
        if not bindings:
            raise ConfigError("receiver needs at least one stream binding")
        self.bindings = list(bindings)
        self.source = source
        self.ring = ring if isinstance(ring, SlotRing) else SlotRing(**(ring or RingConfig()).to_dict())
        self.raw = source.kind == RAW
        self.stats = RxStats()
        self.demux = Demux(self.bindings, self.stats)
        self.audits = {b.stream_id: AuditState(b.stream_id, b.expected_first_id) for b in self.bindings}
        self.hists = {b.stream_id: WordHistogram(big_endian) for b in self.bindings}
        self.histogram = histogram
        self.placement = placement
        self.core_map = core_map
        self.ccx = ccx
        self.layout = layout
        self.stats_path = Path(stats_path) if stats_path else None
        self.stats_interval = stats_interval
        self.stop_on_event = stop_on_event
        self.require_udp_checksum = require_udp_checksum
        self._queues = {b.stream_id: queue.SimpleQueue() for b in self.bindings}
        self._stop = threading.Event()
        self._errors: list[BaseException] = []
        self._port_to_sid = {b.port: b.stream_id for b in self.bindings}
        if placement is not None:
            if placement.n_streams != len(self.bindings):
                raise ConfigError(f"placement has {placement.n_streams} workers for {len(self.bindings)} streams")
            rule_breaks = validate(placement, layout)
            if any("out of range" in p for p in rule_breaks):
                raise ConfigError("; ".join(rule_breaks))
            if rule_breaks:
                log.info("placement %s breaks placement rules: %s", placement, "; ".join(rule_breaks))

    def request_stop(self) -> None:
        self._stop.set()

    def snapshot(self) -> dict:
        """Counters as of now; monotone, exact once the receiver has stopped."""
        return self.stats.to_dict()

    # -- threads ------------------------------------------------------------------

    def _pin(self, position: int) -> None:
        if self.core_map is not None:
            pin_current_thread(position, self.core_map, self.ccx, self.layout)

    def _worker(self, k: int, sid: int) -> None:
        try:
            if self.placement is not None:
                self._pin(self.placement.workers[k])
            q = self._queues[sid]
            hist = self.hists[sid]
            ring = self.ring
            while True:
                item = q.get()
                if item is None:
                    break
                idx, offs, lens = item
                if self.histogram:
                    hist.accumulate_slots(ring.slots, idx, offs, lens)
                ring.release(idx, expected_owner=WORKER)
        except BaseException as exc:  # surfaced by run()
            self._errors.append(exc)
            self._stop.set()

    def _management(self, stop: StopCondition) -> None:
        try:
            if self.placement is not None:
                self._pin(self.placement.receiver)
            t0 = time.monotonic()
            last_export = t0
            while not self._stop.is_set():
                burst = self.source.recv(timeout=0.05)
                if burst is None:
                    if self.source.drained:
                        break
                elif len(burst):
                    self._intake(burst)
                now = time.monotonic()
                if self.stats_path is not None and now - last_export >= self.stats_interval:
                    self._export(now - t0)
                    last_export = now
                if stop.packets is not None and self.stats.packets >= stop.packets:
                    break
                if stop.duration_s is not None and now - t0 >= stop.duration_s:
                    break
                if self.stop_on_event and any(a.events or a.events_overflow for a in self.audits.values()):
                    log.warning("audit event seen; stopping early")
                    break
        except BaseException as exc:
            self._errors.append(exc)
        finally:
            for q in self._queues.values():
                q.put(None)

    def _export(self, elapsed: float) -> None:
        snap = self.snapshot()
        snap["elapsed_s"] = elapsed
        with open(self.stats_path, "a") as fh:
            fh.write(json.dumps(snap) + "\n")

    # -- intake -------------------------------------------------------------------

    def _intake(self, burst) -> None:
        ring = self.ring
        n = len(burst)
        self.stats.intake_packets += n
        pos = 0
        while pos < n:
            idx = ring.acquire(n - pos)
            if len(idx) == 0:
                if self.source.lossless and not self._stop.is_set():
                    ring.wait_free(1, 0.1)
                    continue
                # drop newest: everything not yet placed in a slot
                self.stats.slots_exhausted[burst.queue_index] += n - pos
                self.stats.exhaustion_events += 1
                return
            self._process(burst, pos, idx)
            pos += len(idx)

    def _process(self, burst, r0: int, idx: np.ndarray) -> None:
        ring = self.ring
        r1 = r0 + len(idx)
        lengths = burst.lengths[r0:r1]
        ring.write(idx, burst.data[r0:r1], lengths)
        now = time.monotonic_ns()
        ring.rx_ns[idx] = now
        ring.queue_index[idx] = burst.queue_index

        keep = lengths <= ring.slot_size
        if not keep.all():
            self.stats.frame_errors["oversize"] += int(np.count_nonzero(~keep))
        if self.raw:
            width = min(int(lengths.max()), ring.slot_size)
            parsed = parse_frames(ring.slots[idx, :width], np.minimum(lengths, width), self.require_udp_checksum)
            parsed.error[~keep] = 0
            bad = parsed.error != 0
            if bad.any():
                codes = parsed.error[bad]
                for code, count in zip(*np.unique(codes, return_counts=True)):
                    kind = FRAME_ERROR_KINDS[code - 1]
                    self.stats.frame_errors[kind] += int(count)
                # attribute checksum failures to the stream owning the (unverified) port
                cks = np.flatnonzero(bad & (parsed.error >= FRAME_ERROR_KINDS.index("checksum_ipv4") + 1))
                for k in cks.tolist():
                    row = ring.slots[idx[k]]
                    port = int(row[36]) << 8 | int(row[37])
                    sid = self._port_to_sid.get(port)
                    if sid is not None:
                        self.stats.streams[sid].checksum_failures += 1
                keep &= ~bad
            offs = parsed.payload_offset
            dlen = parsed.payload_len
            ports = parsed.dst_port
        else:
            offs = np.zeros(len(idx), np.int64)
            dlen = lengths
            ports = burst.dst_port[r0:r1]

        # DROP header, read from the slots
        if self.raw and np.any(offs[keep] != offs[keep][0] if keep.any() else False):
            cols = offs[:, None] + np.arange(HEADER_SIZE)[None, :]
            cols = np.minimum(cols, ring.slot_size - 1)
            head = ring.slots[idx[:, None], cols]
        else:
            o = int(offs[keep][0]) if keep.any() else 0
            head = ring.slots[idx, o:o + HEADER_SIZE]
        headers, derr = decode_header_rows(head, np.where(keep, dlen, HEADER_SIZE))
        derr[~keep] = 0
        if derr.any():
            for k in np.flatnonzero(derr).tolist():
                sid = self._port_to_sid.get(int(ports[k]))
                kind = DECODE_ERROR_KINDS[derr[k] - 1]
                if sid is None:
                    self.stats.frame_errors["decode_" + kind] += 1
                else:
                    self.stats.streams[sid].decode_errors[kind] += 1
            keep &= derr == 0

        sids = headers["stream_id"]
        pids = headers["packet_id"]
        plen = headers["payload_len"].astype(np.int64)
        if keep.any() and ports[keep].min() == ports[keep].max():
            groups = [(int(ports[keep][0]), np.flatnonzero(keep))]
        else:
            groups = [(int(p), np.flatnonzero(keep & (ports == p))) for p in np.unique(ports[keep])]
        delivered = np.zeros(len(idx), bool)
        for port, rows in groups:
            b = self.demux.by_port.get(port)
            if b is None:
                self.stats.unbound += len(rows)
                continue
            ok = sids[rows] == b.stream_id
            if not ok.all():
                self.stats.streams[b.stream_id].misrouted += int(np.count_nonzero(~ok))
                rows = rows[ok]
            if len(rows) == 0:
                continue
            st = self.stats.streams[b.stream_id]
            self.audits[b.stream_id].observe_batch(pids[rows], ring.rx_ns[idx[rows]])
            st.packets += len(rows)
            st.bytes += int(plen[rows].sum())
            delivered[rows] = True
            sel = idx[rows]
            ring.hand_to_worker(sel)
            self._queues[b.stream_id].put((sel, offs[rows] + HEADER_SIZE, plen[rows]))
        if not delivered.all():
            ring.release(idx[~delivered], expected_owner=INTAKE)

    # -- run ----------------------------------------------------------------------

    def run(self, stop: StopCondition | None = None) -> ReceiverResult:
        stop = stop or StopCondition()
        t0 = time.monotonic()
        workers = [threading.Thread(target=self._worker, args=(k, b.stream_id), name=f"worker-{b.stream_id}",
                                    daemon=True) for k, b in enumerate(self.bindings)]
        for w in workers:
            w.start()
        mgmt = threading.Thread(target=self._management, args=(stop,), name="management", daemon=True)
        mgmt.start()
        mgmt.join()
        for w in workers:
            w.join()
        duration = time.monotonic() - t0
        if self._errors:
            raise self._errors[0]
        self.ring.check_conservation()
        if self.stats_path is not None:
            self._export(duration)
        return ReceiverResult(
            stats=self.stats,
            reports={sid: a.report() for sid, a in self.audits.items()},
            histograms=self.hists,
            duration_s=duration,
            census=self.ring.census(),
        )


def run_receiver(bindings: list[StreamBinding], source: Transport, ring: RingConfig | None = None,
                 placement: AssignmentPlan | None = None, stop: StopCondition | None = None, **kw) -> ReceiverResult:
    return Receiver(bindings, source, ring, placement, **kw).run(stop)
