"""Packet-identifier audit.

For consecutive packets of a stream the identifier distance should be exactly
one. Any other distance is reported as an event:

* ``d > 1``  -> ``Missing(d - 1)``: the packets in between are counted as lost.
* ``d <= 0`` -> ``ExtraOrRepeat(d)``: an additional (repeated or late) packet.

A single late packet therefore shows up as three events (missing, extra,
missing). Events are reported raw; interpreting such combinations is left to
offline analysis of the event log.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .protocol import id_distance, id_distances

MAX_EVENTS = 10**6
_U64 = 1 << 64


class EventKind(str, enum.Enum):
    MISSING = "missing"
    EXTRA = "extra"


@dataclass(frozen=True)
class AuditEvent:
    kind: EventKind
    value: int  # count for MISSING, (non-positive) distance for EXTRA
    at_packet_id: int
    at_receive_index: int
    timestamp_ns: int = 0

    @property
    def key(self) -> tuple:
        """Identity used for comparisons (timestamps excluded)."""
        return (self.kind.value, self.value, self.at_packet_id, self.at_receive_index)

    def __str__(self):
        name = "Missing" if self.kind is EventKind.MISSING else "ExtraOrRepeat"
        return f"{name}({self.value})@{self.at_packet_id}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value, "at_packet_id": self.at_packet_id,
                "at_receive_index": self.at_receive_index, "timestamp_ns": self.timestamp_ns}


def event_for_distance(d: int, packet_id: int, index: int, ts: int = 0) -> AuditEvent | None:
    if d == 1:
        return None
    if d > 1:
        return AuditEvent(EventKind.MISSING, d - 1, packet_id, index, ts)
    return AuditEvent(EventKind.EXTRA, d, packet_id, index, ts)


def loss_upper_limit(packets_received: int, missing: int) -> float | None:
    """Ratio of lost to transferred packets.

    With no loss observed the bound assumes the next packet would have been
    lost: ``1 / (received + 1)``. Returns ``None`` when there is no data.
    """
    if packets_received < 0 or missing < 0:
        raise ValueError("counts must be non-negative")
    if missing > 0:
        return missing / (packets_received + missing)
    if packets_received == 0:
        return None
    return 1 / (packets_received + 1)


class AuditState:
    """Per-stream identifier audit, owned by the management thread."""

    def __init__(self, stream_id: int = 0, expected_first_id: int | None = None, max_events: int = MAX_EVENTS):
        self.stream_id = stream_id
        self.expected_first_id = expected_first_id
        self.max_events = max_events
        self.prev: int | None = None if expected_first_id is None else (expected_first_id - 1) % _U64
        self.first_id: int | None = None
        self.last_id: int | None = None
        self.packets = 0
        self.packets_ok = 0
        self.total_missing = 0
        self.total_extra = 0
        self.extra_excess = 0  # sum of |d| over extra events
        self.events: list[AuditEvent] = []
        self.events_overflow = 0

    def _record(self, ev: AuditEvent) -> None:
        if ev.kind is EventKind.MISSING:
            self.total_missing += ev.value
        else:
            self.total_extra += 1
            self.extra_excess -= ev.value
        if len(self.events) < self.max_events:
            self.events.append(ev)
        else:
            self.events_overflow += 1

    def observe(self, packet_id: int, timestamp_ns: int = 0) -> AuditEvent | None:
        index = self.packets
        self.packets += 1
        if self.first_id is None:
            self.first_id = packet_id
        self.last_id = packet_id
        if self.prev is None:
            self.prev = packet_id
            self.packets_ok += 1
            return None
        d = id_distance(self.prev, packet_id)
        self.prev = packet_id
        if d >= 1:
            self.packets_ok += 1
        ev = event_for_distance(d, packet_id, index, timestamp_ns)
        if ev is not None:
            self._record(ev)
        return ev

    def observe_batch(self, packet_ids: np.ndarray, timestamps_ns: np.ndarray | None = None) -> list[AuditEvent]:
        """Vectorised :meth:`observe` over a burst, in delivery order."""
        ids = np.asarray(packet_ids, dtype=np.uint64)
        n = len(ids)
        if n == 0:
            return []
        base = self.packets
        self.packets += n
        if self.first_id is None:
            self.first_id = int(ids[0])
        self.last_id = int(ids[-1])
        start = 0
        if self.prev is None:
            self.prev = int(ids[0])
            self.packets_ok += 1
            start = 1
        d = id_distances(self.prev, ids[start:])
        self.prev = int(ids[-1])
        self.packets_ok += int(np.count_nonzero(d >= 1))
        where = np.flatnonzero(d != 1)
        out = []
        for k in where.tolist():
            pos = start + k
            ts = 0 if timestamps_ns is None else int(timestamps_ns[pos])
            ev = event_for_distance(int(d[k]), int(ids[pos]), base + pos, ts)
            self._record(ev)
            out.append(ev)
        return out

    def check_accounting(self) -> bool:
        """last - first + 1 == ok + missing - extra_excess (mod 2**64)."""
        if self.first_id is None:
            return self.packets == 0
        span = (self.last_id - self.first_id + 1) % _U64
        return span == (self.packets_ok + self.total_missing - self.extra_excess) % _U64

    def report(self) -> "AuditReport":
        return AuditReport(
            stream_id=self.stream_id,
            packets=self.packets,
            packets_ok=self.packets_ok,
            total_missing=self.total_missing,
            total_extra=self.total_extra,
            extra_excess=self.extra_excess,
            first_id=self.first_id,
            last_id=self.last_id,
            events=list(self.events),
            events_overflow=self.events_overflow,
        )


@dataclass
class AuditReport:
    stream_id: int
    packets: int = 0
    packets_ok: int = 0
    total_missing: int = 0
    total_extra: int = 0
    extra_excess: int = 0
    first_id: int | None = None
    last_id: int | None = None
    events: list[AuditEvent] = field(default_factory=list)
    events_overflow: int = 0

    @property
    def event_count(self) -> int:
        return len(self.events) + self.events_overflow

    @property
    def clean(self) -> bool:
        return self.event_count == 0

    @property
    def loss_ratio(self) -> float | None:
        return loss_upper_limit(self.packets, self.total_missing)

    def to_dict(self, max_events: int | None = 1000) -> dict:
        ratio = self.loss_ratio
        events = self.events if max_events is None else self.events[:max_events]
        return {
            "stream_id": self.stream_id,
            "packets": self.packets,
            "packets_ok": self.packets_ok,
            "total_missing": self.total_missing,
            "total_extra": self.total_extra,
            "extra_excess": self.extra_excess,
            "first_id": self.first_id,
            "last_id": self.last_id,
            "event_count": self.event_count,
            "events_overflow": self.events_overflow,
            "loss_ratio": "no data" if ratio is None else ratio,
            "loss_ratio_is_upper_limit": self.total_missing == 0,
            "events": [e.to_dict() for e in events],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2)

    def write_events_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stream_id", "kind", "value", "at_packet_id", "at_receive_index", "timestamp_ns"])
            for e in self.events:
                w.writerow([self.stream_id, e.kind.value, e.value, e.at_packet_id, e.at_receive_index, e.timestamp_ns])


# -- oracle ---------------------------------------------------------------------

def replay_delivered_ids(truth, dst_port: int | None = None) -> list[int]:
    """Rebuild the delivered identifier sequence from a fault ground-truth log.

    Written with plain Python lists, independently of the numpy path in
    :func:`dropstream.transport.fault_order`.
    """
    out: list[int] = []
    for rec in truth.records:
        expanded = []  # (id, port, shift-or-0) after drops and duplicates
        for pid, port, dropped, duplicated, s in zip(rec.packet_ids.tolist(), rec.dst_port.tolist(),
                                                     rec.drop.tolist(), rec.dup.tolist(), rec.shift.tolist()):
            if dropped:
                continue
            expanded.append((pid, port, s))
            if duplicated:
                expanded.append((pid, port, 0))
        if any(s for _pid, _port, s in expanded):
            keyed = [(pos + s + 0.5 if s else pos, pos, pid, port) for pos, (pid, port, s) in enumerate(expanded)]
            keyed.sort()
            delivered = [(pid, port) for _key, _pos, pid, port in keyed]
        else:
            delivered = [(pid, port) for pid, port, _s in expanded]
        if dst_port is None:
            out.extend(pid for pid, _port in delivered)
        else:
            out.extend(pid for pid, port in delivered if port == dst_port)
    return out


def reference_events(ids: list[int], expected_first_id: int | None = None,
                     max_events: int = MAX_EVENTS) -> list[tuple]:
    """Plain-integer application of the distance rules; returns event keys."""
    events = []
    prev = None if expected_first_id is None else expected_first_id - 1
    for index, pid in enumerate(ids):
        if prev is None:
            prev = pid
            continue
        d = (pid - prev) % _U64
        if d >= 1 << 63:
            d -= _U64
        prev = pid
        if d == 1:
            continue
        if len(events) < max_events:
            if d > 1:
                events.append(("missing", d - 1, pid, index))
            else:
                events.append(("extra", d, pid, index))
    return events


@dataclass
class Mismatch:
    position: int
    expected: tuple | None
    actual: tuple | None


def diff_events(expected: list[tuple], actual: list[tuple]) -> list[Mismatch]:
    out = []
    for k in range(max(len(expected), len(actual))):
        e = expected[k] if k < len(expected) else None
        a = actual[k] if k < len(actual) else None
        if e != a:
            out.append(Mismatch(k, e, a))
    return out


def reconcile(report: AuditReport, truth, dst_port: int | None = None,
              expected_first_id: int | None = None) -> list[Mismatch]:
    """Compare a receiver's audit report with events replayed from ground truth."""
    ids = replay_delivered_ids(truth, dst_port)
    expected = reference_events(ids, expected_first_id)
    actual = [e.key for e in report.events]
    diffs = diff_events(expected, actual)
    if report.packets != len(ids):
        diffs.append(Mismatch(-1, ("packets", len(ids)), ("packets", report.packets)))
    return diffs
