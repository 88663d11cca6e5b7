"""Multiplex generators into DROP streams and push them through a transport.

Each stream has its own packet counter; generators attached to the same
stream are drained round-robin (optionally weighted), so their packets
interleave while the identifiers still advance by exactly one.

Pacing works on bursts: every packet gets a scheduled send time from the
generator's wire time plus pause, and a real-time sender sleeps until the
first packet of a burst is due. The mean rate is exact; spacing inside a
burst is not reproduced.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .frames import Endpoint, build_frames
from .patterns import GeneratorConfig, PatternGenerator
from .protocol import HEADER_SIZE, MAX_SLOT_SIZE, PROTOCOL_VERSION, payload_capacity
from .transport import DATAGRAM, RAW, Burst, Transport

log = logging.getLogger(__name__)

_U64_MASK = (1 << 64) - 1


@dataclass
class StopCondition:
    packets: int | None = None
    blocks: int | None = None
    duration_s: float | None = None

    def to_dict(self) -> dict:
        return {"packets": self.packets, "blocks": self.blocks, "duration_s": self.duration_s}

    @classmethod
    def from_dict(cls, d: dict | None) -> "StopCondition":
        return cls(**(d or {}))


@dataclass
class StreamConfig:
    stream_id: int
    port: int
    generators: list[GeneratorConfig]
    initial_packet_id: int = 0
    address: str = "127.0.0.1"
    weights: list[int] | None = None  # weighted round-robin over generators
    src_port: int = 40000

    def validate(self) -> None:
        if not self.generators:
            raise ValueError(f"stream {self.stream_id} has no generators")
        if not 0 < self.port <= 0xFFFF:
            raise ValueError(f"stream {self.stream_id}: bad UDP port {self.port}")
        if not 0 <= self.stream_id <= 0xFFFF:
            raise ValueError(f"stream id {self.stream_id} does not fit 16 bits")
        if self.weights is not None and (len(self.weights) != len(self.generators) or min(self.weights) < 1):
            raise ValueError("weights must give a positive integer per generator")

    def to_dict(self) -> dict:
        return {
            "stream_id": self.stream_id,
            "port": self.port,
            "address": self.address,
            "initial_packet_id": self.initial_packet_id,
            "weights": self.weights,
            "src_port": self.src_port,
            "generators": [g.to_dict() for g in self.generators],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamConfig":
        d = dict(d)
        d["generators"] = [GeneratorConfig.from_dict(g) for g in d["generators"]]
        return cls(**d)


@dataclass
class SendSummary:
    stream_id: int
    packets: int = 0
    bytes: int = 0  # payload bytes, DROP header excluded
    duration_s: float = 0.0
    complete: bool = True
    error: str | None = None
    first_packet_id: int | None = None
    last_packet_id: int | None = None

    @property
    def achieved_pps(self) -> float:
        return self.packets / self.duration_s if self.duration_s > 0 else 0.0

    @property
    def achieved_bps(self) -> float:
        return 8 * self.bytes / self.duration_s if self.duration_s > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "stream_id": self.stream_id, "packets": self.packets, "bytes": self.bytes,
            "duration_s": self.duration_s, "achieved_pps": self.achieved_pps,
            "achieved_bps": self.achieved_bps, "complete": self.complete, "error": self.error,
        }


@dataclass
class FrameAddressing:
    src: Endpoint = field(default_factory=lambda: Endpoint(b"\x02\x00\x00\x00\x00\x01", "10.0.0.1", 40000))
    dst_mac: bytes = b"\x02\x00\x00\x00\x00\x02"
    dst_ip: str = "10.0.0.2"


class StreamSender:
    """Builds consecutive bursts of one DROP stream.

    ``send_ns`` of a built burst holds the schedule relative to the stream
    start (ns); real-time drivers add their own time base.
    """

    def __init__(self, cfg: StreamConfig, burst_size: int = 256, frame_mode: str = DATAGRAM,
                 addressing: FrameAddressing | None = None):
        cfg.validate()
        capacity = payload_capacity(MAX_SLOT_SIZE, raw_frame=frame_mode == RAW)
        for g in cfg.generators:
            g.validate(capacity)
        self.cfg = cfg
        self.burst_size = burst_size
        self.frame_mode = frame_mode
        self.addressing = addressing or FrameAddressing()
        self.gens = [PatternGenerator(g) for g in cfg.generators]
        weights = cfg.weights or [1] * len(self.gens)
        self._schedule = np.repeat(np.arange(len(self.gens)), weights)
        self._rr = 0
        self.next_id = cfg.initial_packet_id & _U64_MASK
        self.t_ns = 0.0  # schedule time of the next packet
        self.packets = 0
        self.bytes = 0
        self.blocks = 0
        self.ip_id = 0
        self.done = False

    def _periods(self, g: int, lengths: np.ndarray) -> np.ndarray:
        c = self.gens[g].config
        wire = lengths * 8e9 / c.line_rate
        if c.target_rate is not None:
            pause = np.maximum(0.0, np.rint(lengths * 8e9 / c.target_rate - wire))
        else:
            pause = float(c.pause_ns)
        return wire + pause

    def build(self, stop: StopCondition | None = None, max_packets: int | None = None) -> Burst | None:
        if self.done:
            return None
        stop = stop or StopCondition()
        n = self.burst_size if max_packets is None else min(self.burst_size, max_packets)
        if stop.packets is not None:
            n = min(n, stop.packets - self.packets)
        if n <= 0:
            self.done = True
            return None
        S = len(self._schedule)
        gen_of_row = self._schedule[(self._rr + np.arange(n)) % S]
        lengths = np.empty(n, np.int64)
        offsets = np.empty(n, np.int64)
        lasts = np.empty(n, bool)
        periods = np.empty(n, np.float64)
        for g in range(len(self.gens)):
            rows = np.flatnonzero(gen_of_row == g)
            if len(rows):
                ln, off, last = self.gens[g].peek(len(rows))
                lengths[rows], offsets[rows], lasts[rows] = ln, off, last
                periods[rows] = self._periods(g, ln)
        if stop.blocks is not None:
            reached = np.flatnonzero(self.blocks + np.cumsum(lasts) >= stop.blocks)
            if len(reached):
                n = int(reached[0]) + 1
        starts = self.t_ns + np.concatenate([[0.0], np.cumsum(periods[:n - 1])])
        if stop.duration_s is not None:
            n = min(n, int(np.count_nonzero(starts < stop.duration_s * 1e9)))
            if n == 0:
                self.done = True
                return None
        gen_of_row, lengths, offsets, lasts = gen_of_row[:n], lengths[:n], offsets[:n], lasts[:n]

        data = self._fill(gen_of_row, lengths, offsets, n)
        ids = (np.uint64(self.next_id) + np.arange(n, dtype=np.uint64))  # wraps mod 2**64
        data[:, 8:16] = ids.astype(">u8").view(np.uint8).reshape(n, 8)
        row_len = HEADER_SIZE + lengths
        send_ns = np.rint(starts[:n]).astype(np.int64)
        ports = np.full(n, self.cfg.port, np.int64)

        for g in range(len(self.gens)):
            self.gens[g].advance(int(np.count_nonzero(gen_of_row == g)))
        self._rr = (self._rr + n) % S
        self.next_id = (self.next_id + n) & _U64_MASK
        self.t_ns = float(starts[n - 1] + periods[n - 1])
        self.packets += n
        self.bytes += int(lengths.sum())
        self.blocks += int(lasts.sum())
        if (stop.blocks is not None and self.blocks >= stop.blocks) or \
                (stop.packets is not None and self.packets >= stop.packets):
            self.done = True

        if self.frame_mode == RAW:
            a = self.addressing
            src = Endpoint(a.src.mac, a.src.ip, self.cfg.src_port)
            dst = Endpoint(a.dst_mac, a.dst_ip, self.cfg.port)
            ip_ids = self.ip_id + np.arange(n)
            self.ip_id = (self.ip_id + n) & 0xFFFF
            frames, flen = build_frames(data, row_len, src, dst, ip_ids)
            return Burst(frames, flen, ports, send_ns, RAW)
        return Burst(data, row_len, ports, send_ns, DATAGRAM)

    def _fill(self, gen_of_row, lengths, offsets, n) -> np.ndarray:
        width = HEADER_SIZE + int(lengths.max())
        uniform = bool(np.all(lengths == lengths[0]))
        data = np.empty((n, width), np.uint8) if uniform else np.zeros((n, width), np.uint8)
        data[:, 0] = PROTOCOL_VERSION
        data[:, 1] = 0
        data[:, 2] = self.cfg.stream_id >> 8
        data[:, 3] = self.cfg.stream_id & 0xFF
        data[:, 4] = lengths >> 8
        data[:, 5] = lengths & 0xFF
        data[:, 6:8] = 0
        single = len(self.gens) == 1
        for g, gen in enumerate(self.gens):
            rows = np.arange(n) if single else np.flatnonzero(gen_of_row == g)
            m = len(rows)
            if m == 0:
                continue
            ln = lengths[rows]
            off = offsets[rows]
            L = int(ln[0])
            if np.all(ln == L) and np.all(np.diff(off) == L):
                src = gen.stream_bytes(int(off[0]), m * L).reshape(m, L)
                if single:
                    data[:, HEADER_SIZE:HEADER_SIZE + L] = src
                else:
                    data[rows, HEADER_SIZE:HEADER_SIZE + L] = src
            else:
                for r, o, length in zip(rows.tolist(), off.tolist(), ln.tolist()):
                    data[r, HEADER_SIZE:HEADER_SIZE + length] = gen.stream_bytes(o, length)
        return data

    def summary(self, duration_s: float, complete: bool = True, error: str | None = None) -> SendSummary:
        first = self.cfg.initial_packet_id if self.packets else None
        last = (self.next_id - 1) & _U64_MASK if self.packets else None
        return SendSummary(self.cfg.stream_id, self.packets, self.bytes, duration_s, complete, error, first, last)


def send_stream(cfg: StreamConfig | StreamSender, transport: Transport, stop: StopCondition,
                clock: str = "real", burst_size: int = 256, frame_mode: str | None = None,
                addressing: FrameAddressing | None = None) -> SendSummary:
    """Send one stream until ``stop``; returns exact totals.

    ``clock="real"`` paces against the monotonic clock; ``clock="virtual"``
    never sleeps and reports the scheduled duration.
    """
    if isinstance(cfg, StreamSender):
        sender = cfg
    else:
        sender = StreamSender(cfg, burst_size, frame_mode or transport.kind, addressing)
    t0 = time.monotonic_ns()
    try:
        while True:
            burst = sender.build(stop)
            if burst is None:
                break
            if clock == "real":
                due = t0 + int(burst.send_ns[0])
                now = time.monotonic_ns()
                if due > now:
                    time.sleep((due - now) / 1e9)
                burst.send_ns += t0
            transport.send(burst)
    except Exception as exc:  # transport failure: report what was sent
        log.warning("stream %d aborted: %s", sender.cfg.stream_id, exc)
        return sender.summary(_elapsed(clock, sender, t0), complete=False, error=str(exc))
    if clock == "real":
        # let the last packet's period run out so the mean rate is not inflated
        end = t0 + int(sender.t_ns)
        now = time.monotonic_ns()
        if end > now:
            time.sleep((end - now) / 1e9)
    return sender.summary(_elapsed(clock, sender, t0))


def _elapsed(clock, sender, t0):
    if clock == "virtual":
        return sender.t_ns / 1e9
    return (time.monotonic_ns() - t0) / 1e9


def run_virtual(senders: list[StreamSender], transport: Transport, stop: StopCondition) -> list[SendSummary]:
    """Drive several streams on one virtual clock.

    Packets of all streams are merged in send-time order: each round sends
    everything scheduled up to the earliest end of any pending burst.
    """
    pending = [s.build(stop) for s in senders]
    while True:
        live = [i for i, b in enumerate(pending) if b is not None]
        if not live:
            break
        horizon = min(pending[i].send_ns[-1] for i in live)
        parts = []
        for i in live:
            b = pending[i]
            k = int(np.searchsorted(b.send_ns, horizon, side="right"))
            if k:
                parts.append(b.take(slice(0, k)))
            pending[i] = b.take(slice(k, None)) if k < len(b) else senders[i].build(stop)
        merged = parts[0] if len(parts) == 1 else Burst.concat(parts)
        if len(parts) > 1:
            merged = merged.take(np.argsort(merged.send_ns, kind="stable"))
        transport.send(merged)
    return [s.summary(s.t_ns / 1e9) for s in senders]
