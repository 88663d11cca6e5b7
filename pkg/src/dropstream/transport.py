"""Transports moving bursts of packets from senders to a receiver.

A :class:`Burst` carries ``n`` packets as rows of a 2-D uint8 array: bare
UDP payloads (DROP header first) in datagram mode, or complete
Ethernet/IPv4/UDP frames in raw-frame mode.

* :class:`LoopbackTransport` -- in-process, ordered, lossless. The receive
  side pulls bursts; a full queue blocks the sender.
* :class:`FaultyLoopback` -- seeded drop / duplicate / reorder on top of a
  loopback, with a ground-truth log for oracle checks (:func:`inject_faults`).
* :class:`SimulatedHostTransport` -- loopback whose receiving host has a
  finite packet queue and a per-packet cost; packets are dropped when the
  queue is full, on a virtual clock.
* :class:`UdpSocketTransport` / :class:`UdpSocketSource` -- real UDP sockets.
* :class:`RawSocketTransport` -- AF_PACKET sender/receiver for lab NICs.
"""

from __future__ import annotations

import collections
import dataclasses
import queue
import selectors
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

DATAGRAM = "datagram"
RAW = "raw"


@dataclass(frozen=True)
class WireFrame:
    data: np.ndarray  # raw frame (raw mode) or bare UDP payload (datagram mode)
    rx_ns: int
    queue_index: int = 0
    dst_port: int = 0


@dataclass
class Burst:
    data: np.ndarray  # (n, width) uint8, zero past each row's length
    lengths: np.ndarray  # int64
    dst_port: np.ndarray  # int64; meaningful in datagram mode
    send_ns: np.ndarray  # int64; monotonic or virtual send time per packet
    kind: str = DATAGRAM
    queue_index: int = 0

    def __len__(self):
        return int(self.data.shape[0])

    def take(self, index) -> "Burst":
        return Burst(self.data[index], self.lengths[index], self.dst_port[index], self.send_ns[index],
                     self.kind, self.queue_index)

    def frames(self, rx_ns: int = 0):
        for k in range(len(self)):
            yield WireFrame(self.data[k, :self.lengths[k]], rx_ns, self.queue_index, int(self.dst_port[k]))

    @classmethod
    def concat(cls, bursts: list["Burst"]) -> "Burst":
        """Stack bursts of the same kind, zero-padding rows to the widest."""
        width = max(b.data.shape[1] for b in bursts)
        n = sum(len(b) for b in bursts)
        data = np.zeros((n, width), np.uint8)
        r = 0
        for b in bursts:
            data[r:r + len(b), :b.data.shape[1]] = b.data
            r += len(b)
        return cls(data, np.concatenate([b.lengths for b in bursts]), np.concatenate([b.dst_port for b in bursts]),
                   np.concatenate([b.send_ns for b in bursts]), bursts[0].kind, bursts[0].queue_index)

    @classmethod
    def from_rows(cls, rows: list[bytes], dst_port, kind: str = DATAGRAM, send_ns=None) -> "Burst":
        n = len(rows)
        width = max((len(r) for r in rows), default=0)
        data = np.zeros((n, width), np.uint8)
        for k, r in enumerate(rows):
            data[k, :len(r)] = np.frombuffer(bytes(r), np.uint8)
        lengths = np.array([len(r) for r in rows], dtype=np.int64)
        ports = np.broadcast_to(np.asarray(dst_port, dtype=np.int64), (n,)).copy()
        ts = np.zeros(n, np.int64) if send_ns is None else np.asarray(send_ns, np.int64)
        return cls(data, lengths, ports, ts, kind)


class TransportClosed(Exception):
    pass


class Transport:
    """Interface: ``send`` from sender threads, ``recv`` from the intake thread."""

    lossless = False  # True when the link itself never drops (flow-controlled)
    kind = DATAGRAM

    def send(self, burst: Burst) -> int:
        raise NotImplementedError

    def recv(self, timeout: float | None = None) -> Burst | None:
        raise NotImplementedError

    def close(self) -> None:
        pass

    @property
    def drained(self) -> bool:
        """True once closed and every sent burst has been received."""
        return False


class LoopbackTransport(Transport):
    lossless = True

    def __init__(self, maxsize: int = 16, kind: str = DATAGRAM):
        self._q: queue.Queue = queue.Queue(maxsize=maxsize)
        self._closed = threading.Event()
        self.kind = kind
        self.sent_packets = 0

    def send(self, burst: Burst) -> int:
        if len(burst) == 0:
            return 0
        while True:
            if self._closed.is_set():
                raise TransportClosed("loopback closed")
            try:
                self._q.put(burst, timeout=0.1)
                break
            except queue.Full:
                continue
        self.sent_packets += len(burst)
        return len(burst)

    def recv(self, timeout: float | None = None) -> Burst | None:
        try:
            return self._q.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self._closed.set()

    @property
    def drained(self) -> bool:
        return self._closed.is_set() and self._q.empty()


class _Wrapper(Transport):
    def __init__(self, inner: Transport):
        self.inner = inner
        self.kind = inner.kind

    def recv(self, timeout=None):
        return self.inner.recv(timeout)

    def close(self):
        self.inner.close()

    @property
    def drained(self):
        return self.inner.drained


# -- fault injection ------------------------------------------------------------

@dataclass(frozen=True)
class FaultPlan:
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    reorder_prob: float = 0.0
    reorder_depth: int = 1
    seed: int = 0
    drop_ids: tuple = ()  # (dst_port, packet_id) pairs dropped unconditionally

    def __post_init__(self):
        object.__setattr__(self, "drop_ids", tuple((int(p), int(i)) for p, i in self.drop_ids))
        for name in ("drop_prob", "dup_prob", "reorder_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.reorder_depth < 1:
            raise ValueError("reorder_depth must be >= 1")

    @property
    def is_noop(self) -> bool:
        return self.drop_prob == 0 and self.dup_prob == 0 and self.reorder_prob == 0 and not self.drop_ids

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["drop_ids"] = [list(x) for x in self.drop_ids]
        return d

    def streams(self) -> list[np.random.Generator]:
        """Independent uniform streams for drop, duplicate, reorder and depth.

        One double is drawn from each stream per offered packet, so decisions
        do not depend on how packets are grouped into bursts.
        """
        return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(self.seed).spawn(4)]


@dataclass
class FaultRecord:
    """What the fault layer decided for one offered burst."""

    dst_port: np.ndarray
    packet_ids: np.ndarray  # uint64, in offered order
    drop: np.ndarray  # bool
    dup: np.ndarray  # bool
    shift: np.ndarray  # int64; 0 = not delayed, k = delayed past k later packets


@dataclass
class GroundTruth:
    records: list[FaultRecord] = field(default_factory=list)

    @property
    def offered(self) -> int:
        return sum(len(r.drop) for r in self.records)

    @property
    def dropped(self) -> int:
        return sum(int(r.drop.sum()) for r in self.records)

    @property
    def duplicated(self) -> int:
        return sum(int((r.dup & ~r.drop).sum()) for r in self.records)

    @property
    def reordered(self) -> int:
        return sum(int(((r.shift > 0) & ~r.drop).sum()) for r in self.records)


def fault_order(drop: np.ndarray, dup: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Row indices of a burst in delivered order after applying the decisions.

    Dropped rows vanish; a duplicated row is followed by its copy; a row with
    ``shift = k`` moves behind the next ``k`` delivered packets (clipped to the
    end of the burst). The copy of a duplicated row stays in place.
    """
    keep = np.flatnonzero(~drop)
    reps = 1 + dup[keep].astype(np.int64)
    rows = np.repeat(keep, reps)
    primary = np.zeros(len(rows), bool)
    primary[np.cumsum(reps) - reps] = True
    key = np.arange(len(rows), dtype=np.float64)
    moved = primary & (shift[rows] > 0)
    key[moved] += shift[rows][moved] + 0.5
    return rows[np.argsort(key, kind="stable")]


class FaultyLoopback(_Wrapper):
    lossless = True  # losses come only from the plan, which is recorded

    def __init__(self, inner: LoopbackTransport, plan: FaultPlan):
        super().__init__(inner)
        self.plan = plan
        self._u_drop, self._u_dup, self._u_reorder, self._u_depth = plan.streams()
        self.truth = GroundTruth()
        self._lock = threading.Lock()

    def _decide(self, n: int):
        p = self.plan
        drop = self._u_drop.random(n) < p.drop_prob
        dup = self._u_dup.random(n) < p.dup_prob
        reorder = self._u_reorder.random(n) < p.reorder_prob
        depth = 1 + np.floor(self._u_depth.random(n) * p.reorder_depth).astype(np.int64)
        shift = np.where(reorder, depth, 0)
        return drop, dup, shift

    def send(self, burst: Burst) -> int:
        n = len(burst)
        with self._lock:
            drop, dup, shift = self._decide(n)
            ids = _packet_ids(burst)
            for port, pid in self.plan.drop_ids:
                drop |= (burst.dst_port == port) & (ids == np.uint64(pid))
            self.truth.records.append(FaultRecord(burst.dst_port.copy(), ids, drop, dup, shift))
            order = fault_order(drop, dup, shift)
            if len(order):
                self.inner.send(burst.take(order))
        return len(order)


def _packet_ids(burst: Burst) -> np.ndarray:
    off = 0
    if burst.kind == RAW:
        from .frames import UDP_PAYLOAD_OFFSET
        off = UDP_PAYLOAD_OFFSET
    cols = burst.data[:, off + 8:off + 16]
    if cols.shape[1] < 8:
        return np.zeros(len(burst), np.uint64)
    return np.ascontiguousarray(cols).view(">u8").reshape(len(burst)).astype(np.uint64)


def inject_faults(transport: Transport, plan: FaultPlan) -> Transport:
    """Wrap a loopback transport with seeded faults; refuses anything else."""
    if not isinstance(transport, LoopbackTransport):
        raise TypeError(f"fault injection needs a LoopbackTransport, got {type(transport).__name__}")
    if plan.is_noop:
        return _Passthrough(transport)
    return FaultyLoopback(transport, plan)


class _Passthrough(_Wrapper):
    lossless = True

    def __init__(self, inner):
        super().__init__(inner)
        self.truth = GroundTruth()

    def send(self, burst):
        n = len(burst)
        no = np.zeros(n, bool)
        self.truth.records.append(FaultRecord(burst.dst_port.copy(), _packet_ids(burst), no, no, np.zeros(n, np.int64)))
        return self.inner.send(burst)


# -- simulated receiving host ---------------------------------------------------

@dataclass(frozen=True)
class HostCostModel:
    """Per-packet service time ``base_ns + segment_ns * ceil(size / segment_bytes)``."""

    base_ns: float = 60.0
    segment_ns: float = 6.0
    segment_bytes: int = 64
    queue_depth: int = 256

    def service_ns(self, size) -> np.ndarray:
        size = np.asarray(size, dtype=np.int64)
        return self.base_ns + self.segment_ns * (-(-size // self.segment_bytes))

    def capacity_pps(self, size: int) -> float:
        return 1e9 / float(self.service_ns(size))


class SimulatedHostTransport(_Wrapper):
    """Loopback with a finite-queue single-server host model on a virtual clock.

    Packets arrive at their ``send_ns`` timestamps; each needs
    ``cost.service_ns(row length)``. An arrival finding ``queue_depth``
    packets in the system is dropped. Bursts from several streams should be
    sent in timestamp order (see :func:`dropstream.sender.run_virtual`).
    """

    lossless = True

    def __init__(self, inner: LoopbackTransport, cost: HostCostModel):
        super().__init__(inner)
        self.cost = cost
        self._departures: collections.deque = collections.deque()
        self._last_departure = 0.0
        self.offered = 0
        self.dropped = 0
        self._lock = threading.Lock()

    def send(self, burst: Burst) -> int:
        n = len(burst)
        if n == 0:
            return 0
        service = self.cost.service_ns(burst.lengths).tolist()
        arrivals = burst.send_ns.tolist()
        keep = np.zeros(n, bool)
        depth = self.cost.queue_depth
        with self._lock:
            deps = self._departures
            last = self._last_departure
            for k in range(n):
                a = arrivals[k]
                while deps and deps[0] <= a:
                    deps.popleft()
                if len(deps) >= depth:
                    continue
                last = (a if a > last else last) + service[k]
                deps.append(last)
                keep[k] = True
            self._last_departure = last
            self.offered += n
            self.dropped += n - int(keep.sum())
        if keep.any():
            self.inner.send(burst.take(np.flatnonzero(keep)))
        return int(keep.sum())


# -- real sockets ---------------------------------------------------------------

class UdpSocketTransport(Transport):
    """Sends datagram-mode bursts as individual UDP datagrams."""

    def __init__(self, address: str = "127.0.0.1", sndbuf: int | None = None):
        self.address = address
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        if sndbuf:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, sndbuf)

    def send(self, burst: Burst) -> int:
        sent = 0
        for k in range(len(burst)):
            self.sock.sendto(burst.data[k, :burst.lengths[k]].tobytes(), (self.address, int(burst.dst_port[k])))
            sent += 1
        return sent

    def close(self):
        self.sock.close()


class UdpSocketSource(Transport):
    """Receive side: one bound UDP socket per stream port, read into bursts.

    Cannot reach high packet rates; use it for portability and interop.
    """

    def __init__(self, ports, bind: str = "127.0.0.1", rcvbuf: int | None = 1 << 24, max_burst: int = 256,
                 max_datagram: int = 2048, idle_timeout: float | None = None):
        self.selector = selectors.DefaultSelector()
        self.socks = []
        for port in ports:
            s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            if rcvbuf:
                try:
                    s.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
                except OSError:
                    pass
            s.bind((bind, port))
            s.setblocking(False)
            self.selector.register(s, selectors.EVENT_READ, port)
            self.socks.append(s)
        self.ports = [s.getsockname()[1] for s in self.socks]
        self.max_burst = max_burst
        self.max_datagram = max_datagram
        self.idle_timeout = idle_timeout
        self._closed = threading.Event()
        self._last_rx = time.monotonic()
        self._finish_idle = None

    def recv(self, timeout=None):
        buf = np.zeros((self.max_burst, self.max_datagram), np.uint8)
        lengths = np.zeros(self.max_burst, np.int64)
        ports = np.zeros(self.max_burst, np.int64)
        n = 0
        for key, _ in self.selector.select(timeout):
            s, port = key.fileobj, key.data
            while n < self.max_burst:
                try:
                    got = s.recv_into(memoryview(buf[n]), self.max_datagram)
                except BlockingIOError:
                    break
                lengths[n] = got
                ports[n] = port
                n += 1
        if n == 0:
            return None
        self._last_rx = time.monotonic()
        now = time.monotonic_ns()
        return Burst(buf[:n], lengths[:n], ports[:n], np.full(n, now, np.int64), DATAGRAM)

    def close(self):
        self._closed.set()
        for s in self.socks:
            self.selector.unregister(s)
            s.close()

    def finish(self, idle: float = 0.2) -> None:
        """Senders are done: report drained after ``idle`` seconds without traffic."""
        self._finish_idle = idle

    @property
    def drained(self):
        if self._closed.is_set():
            return True
        idle = self._finish_idle if self._finish_idle is not None else self.idle_timeout
        if idle is not None:
            return time.monotonic() - self._last_rx > idle
        return False


class RawSocketTransport(Transport):
    """AF_PACKET endpoint on a real interface (Linux, needs CAP_NET_RAW).

    Raw-frame bursts go out unchanged; received frames are returned as raw
    bursts for :func:`dropstream.frames.parse_frames`.
    """

    kind = RAW

    def __init__(self, interface: str, max_burst: int = 256, snaplen: int = 2048):
        eth_p_all = 0x0003
        self.sock = socket.socket(socket.AF_PACKET, socket.SOCK_RAW, socket.htons(eth_p_all))
        self.sock.bind((interface, 0))
        self.sock.setblocking(False)
        self.max_burst = max_burst
        self.snaplen = snaplen
        self._closed = threading.Event()
        self._last_rx = time.monotonic()
        self._finish_idle = None

    def send(self, burst: Burst) -> int:
        for k in range(len(burst)):
            self.sock.send(burst.data[k, :burst.lengths[k]].tobytes())
        return len(burst)

    def recv(self, timeout=None):
        buf = np.zeros((self.max_burst, self.snaplen), np.uint8)
        lengths = np.zeros(self.max_burst, np.int64)
        n = 0
        deadline = time.monotonic() + (timeout or 0)
        while n < self.max_burst:
            try:
                lengths[n] = self.sock.recv_into(memoryview(buf[n]), self.snaplen)
                n += 1
            except BlockingIOError:
                if n or time.monotonic() >= deadline:
                    break
                time.sleep(0.0005)
        if n == 0:
            return None
        self._last_rx = time.monotonic()
        return Burst(buf[:n], lengths[:n], np.zeros(n, np.int64), np.full(n, time.monotonic_ns(), np.int64), RAW)

    def finish(self, idle: float = 0.2) -> None:
        self._finish_idle = idle

    def close(self):
        self._closed.set()
        self.sock.close()

    @property
    def drained(self):
        if self._closed.is_set():
            return True
        return self._finish_idle is not None and time.monotonic() - self._last_rx > self._finish_idle
