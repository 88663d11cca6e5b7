"""
DROP (Data ReadOut Protocol) header codec.

Every UDP payload starts with a fixed 16-byte header, network byte order::

     0        1        2        4             6          8                16
    +--------+--------+--------+-------------+----------+-----------------+
    |version | flags  |stream  | payload_len | reserved |    packet_id    |
    |  (1)   |  (1)   | id (2) |     (2)     |   (2)    |       (8)       |
    +--------+--------+--------+-------------+----------+-----------------+

The packet identifier is a per-stream counter incremented by one for each
packet. There is no acknowledgement and no retransmission; the receiver only
audits the identifier sequence (see :mod:`dropstream.audit`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PROTOCOL_VERSION = 1
HEADER_SIZE = 16
MAX_SLOT_SIZE = 2048

# Ethernet (14) + IPv4 without options (20) + UDP (8) + DROP (16)
RAW_FRAME_OVERHEAD = 14 + 20 + 8 + HEADER_SIZE

_HEADER = struct.Struct("!BBHHHQ")
assert _HEADER.size == HEADER_SIZE

# numpy view of the same layout, used on whole bursts of slots at once
HEADER_DTYPE = np.dtype(
    [
        ("version", "u1"),
        ("flags", "u1"),
        ("stream_id", ">u2"),
        ("payload_len", ">u2"),
        ("reserved", ">u2"),
        ("packet_id", ">u8"),
    ]
)
assert HEADER_DTYPE.itemsize == HEADER_SIZE

_U64 = 1 << 64
_I63 = 1 << 63


class HeaderEncodeError(ValueError):
    """A header field is out of range; ``field`` names it."""

    def __init__(self, field: str, value, reason: str):
        super().__init__(f"{field}={value!r}: {reason}")
        self.field = field
        self.value = value


class DecodeError(ValueError):
    """Base class for malformed DROP headers."""

    kind = "decode_error"


class TruncatedHeader(DecodeError):
    kind = "truncated"


class UnsupportedVersion(DecodeError):
    kind = "version"


class InvalidFlags(DecodeError):
    kind = "flags"


class PayloadLengthMismatch(DecodeError):
    kind = "payload_len"


DECODE_ERROR_KINDS = tuple(
    cls.kind for cls in (TruncatedHeader, UnsupportedVersion, InvalidFlags, PayloadLengthMismatch)
)


@dataclass(frozen=True)
class DropHeader:
    stream_id: int = 0
    packet_id: int = 0
    payload_len: int = 0
    version: int = PROTOCOL_VERSION
    flags: int = 0

    def check(self, max_payload: int | None = None) -> None:
        """Raise :class:`HeaderEncodeError` for the first invalid field."""
        if self.version != PROTOCOL_VERSION:
            raise HeaderEncodeError("version", self.version, f"only version {PROTOCOL_VERSION} is defined")
        if self.flags != 0:
            raise HeaderEncodeError("flags", self.flags, "reserved, must be zero")
        if not 0 <= self.stream_id <= 0xFFFF:
            raise HeaderEncodeError("stream_id", self.stream_id, "must fit in 16 bits")
        if not 0 <= self.packet_id < _U64:
            raise HeaderEncodeError("packet_id", self.packet_id, "must fit in 64 bits")
        if not 0 <= self.payload_len <= 0xFFFF:
            raise HeaderEncodeError("payload_len", self.payload_len, "must fit in 16 bits")
        if max_payload is not None and self.payload_len > max_payload:
            raise HeaderEncodeError("payload_len", self.payload_len, f"exceeds slot payload capacity {max_payload}")


def payload_capacity(slot_size: int = MAX_SLOT_SIZE, raw_frame: bool = False) -> int:
    """Largest DROP payload that fits one slot.

    In raw-frame mode the slot also holds the Ethernet, IPv4 and UDP headers.
    """
    if not 0 < slot_size <= MAX_SLOT_SIZE:
        raise ValueError(f"slot_size must be in 1..{MAX_SLOT_SIZE}, got {slot_size}")
    overhead = RAW_FRAME_OVERHEAD if raw_frame else HEADER_SIZE
    return max(0, slot_size - overhead)


def encode_header(h: DropHeader, out: bytearray | memoryview | None = None, offset: int = 0,
                  max_payload: int | None = None) -> int | bytes:
    """Write ``h`` into ``out`` at ``offset`` and return the byte count (16).

    With ``out=None`` the encoded bytes are returned instead.
    """
    h.check(max_payload)
    if out is None:
        return _HEADER.pack(h.version, h.flags, h.stream_id, h.payload_len, 0, h.packet_id)
    if len(out) - offset < HEADER_SIZE:
        raise HeaderEncodeError("out", len(out) - offset, f"buffer needs {HEADER_SIZE} free bytes")
    _HEADER.pack_into(out, offset, h.version, h.flags, h.stream_id, h.payload_len, 0, h.packet_id)
    return HEADER_SIZE


def decode_header(buf, offset: int = 0) -> DropHeader:
    """Parse the header at ``buf[offset:]``.

    Trailing bytes beyond ``payload_len`` (e.g. Ethernet padding) are allowed;
    fewer bytes than announced raise :class:`PayloadLengthMismatch`.
    """
    available = len(buf) - offset
    if available < HEADER_SIZE:
        raise TruncatedHeader(f"need {HEADER_SIZE} bytes, got {available}")
    version, flags, stream_id, payload_len, _reserved, packet_id = _HEADER.unpack_from(buf, offset)
    if version != PROTOCOL_VERSION:
        raise UnsupportedVersion(f"version {version}")
    if flags != 0:
        raise InvalidFlags(f"flags 0x{flags:02x}")
    if payload_len > available - HEADER_SIZE:
        raise PayloadLengthMismatch(
            f"payload_len {payload_len} but only {available - HEADER_SIZE} bytes follow the header"
        )
    return DropHeader(stream_id=stream_id, packet_id=packet_id, payload_len=payload_len,
                      version=version, flags=flags)


def id_distance(prev: int, next_: int) -> int:
    """Signed distance ``next_ - prev`` in 64-bit modular arithmetic.

    The result lies in ``[-2**63, 2**63)`` so that a counter wrap from
    ``2**64 - 1`` to ``0`` still reads as a step of +1.
    """
    return ((next_ - prev + _I63) % _U64) - _I63


def id_distances(prev: int, ids: np.ndarray) -> np.ndarray:
    """Vectorised :func:`id_distance` over consecutive ``ids`` (uint64).

    Element ``k`` is the distance from ``ids[k-1]`` (or ``prev`` for k=0).
    """
    ids = np.asarray(ids, dtype=np.uint64)
    before = np.empty_like(ids)
    if len(ids):
        before[0] = np.uint64(prev)
        before[1:] = ids[:-1]
    # uint64 subtraction wraps modulo 2**64; reinterpreting as int64 maps to the signed range
    return (ids - before).view(np.int64)


def decode_header_rows(rows: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decode headers from a 2-D uint8 array whose rows each start with a header.

    ``lengths`` holds the number of valid bytes in each row (header included).
    Returns ``(headers, error)`` where ``headers`` is a structured array of
    :data:`HEADER_DTYPE` and ``error`` is an int8 code per row: 0 for valid,
    otherwise ``1 + DECODE_ERROR_KINDS.index(kind)``.
    """
    n = rows.shape[0]
    lengths = np.asarray(lengths)
    head = np.zeros((n, HEADER_SIZE), dtype=np.uint8)
    width = min(HEADER_SIZE, rows.shape[1]) if rows.ndim == 2 else 0
    head[:, :width] = rows[:, :width]
    headers = head.view(HEADER_DTYPE).reshape(n)
    error = np.zeros(n, dtype=np.int8)
    truncated = lengths < HEADER_SIZE
    error[truncated] = 1
    ok = error == 0
    bad = ok & (headers["version"] != PROTOCOL_VERSION)
    error[bad] = 2
    ok &= ~bad
    bad = ok & (headers["flags"] != 0)
    error[bad] = 3
    ok &= ~bad
    bad = ok & (headers["payload_len"].astype(np.int64) > lengths - HEADER_SIZE)
    error[bad] = 4
    return headers, error
