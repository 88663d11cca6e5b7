"""Ethernet II / IPv4 / UDP framing for raw-frame mode.

With a kernel fast path that hands whole frames to userspace nothing has
decoded or checked the headers yet, so this module does it: ethertype,
IPv4 header checksum, UDP length and the UDP checksum (when nonzero).

Two paths exist. :func:`build_frame` / :func:`parse_frame` handle one frame
with :mod:`struct`; :func:`build_frames` / :func:`parse_frames` operate on a
whole burst held in a 2-D uint8 array.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass

import numpy as np

ETH_HLEN = 14
IPV4_HLEN = 20
UDP_HLEN = 8
ETH_P_IPV4 = 0x0800
IPPROTO_UDP = 17
ETH_MIN_FRAME = 60  # without FCS
UDP_PAYLOAD_OFFSET = ETH_HLEN + IPV4_HLEN + UDP_HLEN

_ETH = struct.Struct("!6s6sH")
_IPV4 = struct.Struct("!BBHHHBBH4s4s")
_UDP = struct.Struct("!HHHH")


class FrameError(ValueError):
    kind = "frame"


class TruncatedFrame(FrameError):
    kind = "truncated"


class NotIPv4(FrameError):
    kind = "ethertype"


class BadIPHeader(FrameError):
    kind = "ip_header"


class NotUDP(FrameError):
    kind = "protocol"


class UdpLengthError(FrameError):
    kind = "udp_length"


class ChecksumError(FrameError):
    def __init__(self, layer: str, msg: str = ""):
        super().__init__(msg or f"bad {layer} checksum")
        self.layer = layer
        self.kind = f"checksum_{layer}"


# index + 1 is the error code used by parse_frames
FRAME_ERROR_KINDS = ("truncated", "ethertype", "ip_header", "protocol", "udp_length",
                     "checksum_ipv4", "checksum_udp")


@dataclass(frozen=True)
class Endpoint:
    mac: bytes = b"\x02\x00\x00\x00\x00\x01"
    ip: str = "10.0.0.1"
    port: int = 0

    @property
    def ip_bytes(self) -> bytes:
        return ipaddress.IPv4Address(self.ip).packed


def parse_mac(text: str) -> bytes:
    parts = text.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return bytes(int(p, 16) for p in parts)


@dataclass(frozen=True)
class ParsedFrame:
    """Location of the UDP payload inside a frame; nothing is copied."""

    payload_offset: int
    payload_len: int
    src_port: int
    dst_port: int
    src_ip: bytes
    dst_ip: bytes

    def payload(self, frame) -> memoryview:
        return memoryview(frame)[self.payload_offset:self.payload_offset + self.payload_len]


def internet_checksum(data, initial: int = 0) -> int:
    """RFC 1071 ones' complement checksum of ``data``."""
    total = initial
    n = len(data)
    if n:
        arr = np.frombuffer(bytes(data) + (b"\x00" if n % 2 else b""), dtype=">u2")
        total += int(arr.sum(dtype=np.uint64))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _pseudo_sum(src_ip: bytes, dst_ip: bytes, udp_len: int) -> int:
    s = 0
    for b in (src_ip, dst_ip):
        s += (b[0] << 8 | b[1]) + (b[2] << 8 | b[3])
    return s + IPPROTO_UDP + udp_len


def build_frame(payload, src: Endpoint, dst: Endpoint, ip_id: int = 0, ttl: int = 64,
                udp_checksum: bool = True) -> bytes:
    udp_len = UDP_HLEN + len(payload)
    total_len = IPV4_HLEN + udp_len
    if total_len > 0xFFFF:
        raise ValueError("payload too large for IPv4")
    ip = bytearray(_IPV4.pack(0x45, 0, total_len, ip_id & 0xFFFF, 0x4000, ttl, IPPROTO_UDP, 0,
                              src.ip_bytes, dst.ip_bytes))
    struct.pack_into("!H", ip, 10, internet_checksum(ip))
    udp = bytearray(_UDP.pack(src.port, dst.port, udp_len, 0))
    if udp_checksum:
        c = internet_checksum(bytes(udp) + bytes(payload), _pseudo_sum(src.ip_bytes, dst.ip_bytes, udp_len))
        struct.pack_into("!H", udp, 6, c or 0xFFFF)
    frame = _ETH.pack(dst.mac, src.mac, ETH_P_IPV4) + bytes(ip) + bytes(udp) + bytes(payload)
    if len(frame) < ETH_MIN_FRAME:
        frame += bytes(ETH_MIN_FRAME - len(frame))
    return frame


def parse_frame(frame, require_udp_checksum: bool = False) -> ParsedFrame:
    """Validate one frame and locate its UDP payload.

    A zero UDP checksum means "not computed" and is accepted unless
    ``require_udp_checksum`` is set.
    """
    n = len(frame)
    if n < ETH_HLEN + IPV4_HLEN:
        raise TruncatedFrame(f"{n} bytes")
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    if ethertype != ETH_P_IPV4:
        raise NotIPv4(f"ethertype 0x{ethertype:04x}")
    vihl, _tos, total_len, _id, _frag, _ttl, proto, _csum, src_ip, dst_ip = _IPV4.unpack_from(frame, ETH_HLEN)
    ihl = (vihl & 0x0F) * 4
    if vihl >> 4 != 4 or ihl < IPV4_HLEN:
        raise BadIPHeader(f"version/ihl byte 0x{vihl:02x}")
    if n < ETH_HLEN + ihl or total_len < ihl + UDP_HLEN or ETH_HLEN + total_len > n:
        raise BadIPHeader(f"total length {total_len} inconsistent with frame of {n} bytes")
    if internet_checksum(memoryview(frame)[ETH_HLEN:ETH_HLEN + ihl]) != 0:
        raise ChecksumError("ipv4")
    if proto != IPPROTO_UDP:
        raise NotUDP(f"ip protocol {proto}")
    udp_off = ETH_HLEN + ihl
    src_port, dst_port, udp_len, udp_csum = _UDP.unpack_from(frame, udp_off)
    if udp_len != total_len - ihl:
        raise UdpLengthError(f"udp length {udp_len}, ip payload {total_len - ihl}")
    if udp_csum == 0 and require_udp_checksum:
        raise ChecksumError("udp")
    if udp_csum != 0:
        seg = memoryview(frame)[udp_off:udp_off + udp_len]
        if internet_checksum(seg, _pseudo_sum(src_ip, dst_ip, udp_len)) != 0:
            raise ChecksumError("udp")
    return ParsedFrame(udp_off + UDP_HLEN, udp_len - UDP_HLEN, src_port, dst_port, src_ip, dst_ip)


# -- burst path ---------------------------------------------------------------

def _fold(s: np.ndarray) -> np.ndarray:
    s = s.astype(np.uint64, copy=True)
    for _ in range(4):
        s = (s & 0xFFFF) + (s >> 16)
    return s


def _row_sums(rows: np.ndarray, start: int, stop: int | None = None) -> np.ndarray:
    """Sum of big-endian 16-bit words over ``rows[:, start:stop]``; bytes past
    each frame's end must be zero."""
    block = rows[:, start:stop]
    if block.shape[1] % 2:
        block = np.concatenate([block, np.zeros((block.shape[0], 1), np.uint8)], axis=1)
    hi = block[:, 0::2].sum(axis=1, dtype=np.uint64)
    lo = block[:, 1::2].sum(axis=1, dtype=np.uint64)
    return (hi << np.uint64(8)) + lo


def build_frames(datagrams: np.ndarray, lengths: np.ndarray, src: Endpoint, dst: Endpoint,
                 ip_ids: np.ndarray, ttl: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Wrap each row of ``datagrams`` (first ``lengths[k]`` bytes) into a frame.

    Returns ``(frames, frame_lengths)``; frames are zero beyond their length.
    """
    n = datagrams.shape[0]
    lengths = np.asarray(lengths, dtype=np.int64)
    width = max(ETH_MIN_FRAME, UDP_PAYLOAD_OFFSET + (int(lengths.max()) if n else 0))
    out = np.zeros((n, width), dtype=np.uint8)
    if n == 0:
        return out, np.zeros(0, np.int64)
    dw = datagrams.shape[1]
    out[:, UDP_PAYLOAD_OFFSET:UDP_PAYLOAD_OFFSET + dw] = datagrams
    # clear anything past each datagram's end so checksums see zero padding
    col = np.arange(width)
    out[col[None, :] >= (UDP_PAYLOAD_OFFSET + lengths)[:, None]] = 0

    eth = np.frombuffer(dst.mac + src.mac + struct.pack("!H", ETH_P_IPV4), np.uint8)
    out[:, :ETH_HLEN] = eth
    udp_len = UDP_HLEN + lengths
    total_len = IPV4_HLEN + udp_len
    ip_ids = np.asarray(ip_ids, dtype=np.int64) & 0xFFFF
    template = bytearray(_IPV4.pack(0x45, 0, 0, 0, 0x4000, ttl, IPPROTO_UDP, 0, src.ip_bytes, dst.ip_bytes))
    ip = np.broadcast_to(np.frombuffer(bytes(template), np.uint8), (n, IPV4_HLEN)).copy()
    ip[:, 2] = total_len >> 8
    ip[:, 3] = total_len & 0xFF
    ip[:, 4] = ip_ids >> 8
    ip[:, 5] = ip_ids & 0xFF
    csum = (~_fold(_row_sums(ip, 0)).astype(np.uint32)) & 0xFFFF
    ip[:, 10] = csum >> 8
    ip[:, 11] = csum & 0xFF
    out[:, ETH_HLEN:ETH_HLEN + IPV4_HLEN] = ip

    u = ETH_HLEN + IPV4_HLEN
    out[:, u] = src.port >> 8
    out[:, u + 1] = src.port & 0xFF
    out[:, u + 2] = dst.port >> 8
    out[:, u + 3] = dst.port & 0xFF
    out[:, u + 4] = udp_len >> 8
    out[:, u + 5] = udp_len & 0xFF
    pseudo = np.uint64(_pseudo_sum(src.ip_bytes, dst.ip_bytes, 0)) + udp_len.astype(np.uint64)
    ucsum = (~_fold(_row_sums(out, u) + pseudo).astype(np.uint32)) & 0xFFFF
    ucsum[ucsum == 0] = 0xFFFF
    out[:, u + 6] = ucsum >> 8
    out[:, u + 7] = ucsum & 0xFF
    return out, np.maximum(UDP_PAYLOAD_OFFSET + lengths, ETH_MIN_FRAME)


@dataclass
class ParsedBurst:
    payload_offset: np.ndarray
    payload_len: np.ndarray
    src_port: np.ndarray
    dst_port: np.ndarray
    error: np.ndarray  # 0 ok, else 1 + FRAME_ERROR_KINDS index


def parse_frames(rows: np.ndarray, lengths: np.ndarray, require_udp_checksum: bool = False) -> ParsedBurst:
    """Validate a burst of frames held in the first ``lengths[k]`` bytes of each row.

    Frames carrying IPv4 options fall back to :func:`parse_frame`.
    """
    n = rows.shape[0]
    lengths = np.asarray(lengths, dtype=np.int64)
    # slots may hold stale bytes past the frame end; they must not enter checksums
    rows = np.where(np.arange(rows.shape[1])[None, :] < lengths[:, None], rows, np.uint8(0))
    err = np.zeros(n, np.int8)
    poff = np.zeros(n, np.int64)
    plen = np.zeros(n, np.int64)
    sport = np.zeros(n, np.int64)
    dport = np.zeros(n, np.int64)
    if n == 0:
        return ParsedBurst(poff, plen, sport, dport, err)
    if rows.shape[1] < UDP_PAYLOAD_OFFSET:
        rows = np.concatenate([rows, np.zeros((n, UDP_PAYLOAD_OFFSET - rows.shape[1]), np.uint8)], axis=1)
    b = lambda k: rows[:, k].astype(np.int64)  # noqa: E731
    w = lambda k: (b(k) << 8) | b(k + 1)  # noqa: E731

    def mark(mask, code):
        m = mask & (err == 0)
        err[m] = code
        return m

    mark(lengths < ETH_HLEN + IPV4_HLEN, 1)
    mark(w(12) != ETH_P_IPV4, 2)
    vihl = b(ETH_HLEN)
    options = (err == 0) & (vihl >> 4 == 4) & ((vihl & 0x0F) > 5)
    mark((vihl >> 4 != 4) | ((vihl & 0x0F) < 5), 3)
    total_len = w(ETH_HLEN + 2)
    simple = (err == 0) & ~options
    mark(simple & ((total_len < IPV4_HLEN + UDP_HLEN) | (ETH_HLEN + total_len > lengths)), 3)
    ipsum = _fold(_row_sums(rows, ETH_HLEN, ETH_HLEN + IPV4_HLEN))
    mark(simple & (ipsum != 0xFFFF), 6)
    mark(simple & (b(ETH_HLEN + 9) != IPPROTO_UDP), 4)
    u = ETH_HLEN + IPV4_HLEN
    udp_len = w(u + 4)
    mark(simple & (udp_len != total_len - IPV4_HLEN), 5)
    has_csum = w(u + 6) != 0
    if require_udp_checksum:
        mark(simple & ~has_csum, 7)
    todo = simple & (err == 0) & has_csum
    if todo.any():
        sub = rows[todo]
        src_dst = sub[:, ETH_HLEN + 12:ETH_HLEN + 20]
        pseudo = _row_sums(src_dst, 0) + np.uint64(IPPROTO_UDP) + udp_len[todo].astype(np.uint64)
        # bytes past the UDP datagram (Ethernet padding) must not enter the sum
        tail = np.arange(sub.shape[1])[None, :] >= (u + udp_len[todo])[:, None]
        if tail.any():
            sub = sub.copy()
            sub[tail] = 0
        usum = _fold(_row_sums(sub, u) + pseudo)
        bad = np.zeros(n, bool)
        bad[np.flatnonzero(todo)[usum != 0xFFFF]] = True
        mark(bad, 7)
    ok = simple & (err == 0)
    poff[ok] = UDP_PAYLOAD_OFFSET
    plen[ok] = udp_len[ok] - UDP_HLEN
    sport[ok] = w(u)[ok]
    dport[ok] = w(u + 2)[ok]
    for k in np.flatnonzero(options):
        try:
            p = parse_frame(rows[k, :lengths[k]].tobytes(), require_udp_checksum)
        except FrameError as exc:
            err[k] = 1 + FRAME_ERROR_KINDS.index(exc.kind)
        else:
            poff[k], plen[k], sport[k], dport[k] = p.payload_offset, p.payload_len, p.src_port, p.dst_port
    return ParsedBurst(poff, plen, sport, dport, err)
