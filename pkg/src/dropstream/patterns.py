"""Software data generators mirroring the FPGA test generators.

A generator produces blocks of ``block_size`` bytes, split into packets of at
most ``packet_size`` bytes, filled from a pattern. Every pattern is a periodic
byte stream, so any packet's payload is a slice of one pre-built buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .protocol import MAX_SLOT_SIZE, payload_capacity

DEFAULT_LINE_RATE = 10.24e9  # bits/s of one FPGA data generator
VERIFY_BLOCK_QUANTUM = 16384  # 128 kbit: every 16-bit counter value equally often
COUNTING16_PERIOD = 2 * 65536
PRNG_PERIOD = 1 << 20

# slack past one period so that most requested slices are plain views
_TILE_SLACK = 1 << 21


@dataclass(frozen=True)
class Counting16:
    """Consecutive 16-bit words starting at 0, wrapping 0xFFFF -> 0."""

    big_endian: bool = False
    kind: str = field(default="counting16", init=False)

    def period(self) -> np.ndarray:
        words = np.arange(65536, dtype=">u2" if self.big_endian else "<u2")
        return words.view(np.uint8)


@dataclass(frozen=True)
class ConstantByte:
    value: int = 0
    kind: str = field(default="constant", init=False)

    def __post_init__(self):
        if not 0 <= self.value <= 255:
            raise ValueError(f"constant byte must be 0..255, got {self.value}")

    def period(self) -> np.ndarray:
        return np.full(64, self.value, dtype=np.uint8)


@dataclass(frozen=True)
class Prng:
    """Seeded pseudo-random bytes repeating every 1 MiB.

    Not part of the histogram equality checks; it exists to exercise the
    verifier with content that is not a counter.
    """

    seed: int = 0
    kind: str = field(default="prng", init=False)

    def period(self) -> np.ndarray:
        return np.random.default_rng(self.seed).integers(0, 256, PRNG_PERIOD, dtype=np.uint8)


Pattern = Counting16 | ConstantByte | Prng

_PATTERN_KINDS = {"counting16": Counting16, "constant": ConstantByte, "prng": Prng}


def pattern_from_dict(d: dict) -> Pattern:
    d = dict(d)
    kind = d.pop("kind")
    return _PATTERN_KINDS[kind](**d)


def pattern_to_dict(p: Pattern) -> dict:
    if isinstance(p, Counting16):
        return {"kind": p.kind, "big_endian": p.big_endian}
    if isinstance(p, ConstantByte):
        return {"kind": p.kind, "value": p.value}
    return {"kind": p.kind, "seed": p.seed}


@dataclass
class GeneratorConfig:
    block_size: int
    packet_size: int
    pattern: Pattern = field(default_factory=Counting16)
    pause_ns: int = 0
    target_rate: float | None = None  # bits/s; overrides pause_ns when set
    line_rate: float = DEFAULT_LINE_RATE

    def validate(self, capacity: int = payload_capacity(MAX_SLOT_SIZE), verification: bool = False) -> None:
        if self.block_size <= 0:
            raise ValueError(f"block_size must be positive, got {self.block_size}")
        if not 1 <= self.packet_size <= capacity:
            raise ValueError(f"packet_size must be in 1..{capacity}, got {self.packet_size}")
        if self.pause_ns < 0:
            raise ValueError("pause_ns must be >= 0")
        if self.target_rate is not None and self.target_rate <= 0:
            raise ValueError("target_rate must be > 0")
        if verification and isinstance(self.pattern, Counting16) and self.block_size % VERIFY_BLOCK_QUANTUM:
            raise ValueError(
                f"block_size {self.block_size} is not a multiple of {VERIFY_BLOCK_QUANTUM} bytes; "
                "the counting pattern would not cover every word equally"
            )

    def pause_for(self, length: int) -> int:
        if self.target_rate is not None:
            return pause_for_rate(length, self.target_rate, self.line_rate)
        return self.pause_ns

    def to_dict(self) -> dict:
        return {
            "block_size": self.block_size,
            "packet_size": self.packet_size,
            "pattern": pattern_to_dict(self.pattern),
            "pause_ns": self.pause_ns,
            "target_rate": self.target_rate,
            "line_rate": self.line_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "pattern" in d:
            d["pattern"] = pattern_from_dict(d["pattern"])
        return cls(**d)


@dataclass
class PayloadChunk:
    data: np.ndarray  # uint8 view
    is_last_of_block: bool

    def __len__(self):
        return len(self.data)


def split_block(block_size: int, packet_size: int) -> list[int]:
    if block_size <= 0 or packet_size <= 0:
        raise ValueError("block_size and packet_size must be positive")
    full, rest = divmod(block_size, packet_size)
    return [packet_size] * full + ([rest] if rest else [])


def wire_time_ns(length: int, line_rate: float = DEFAULT_LINE_RATE) -> float:
    return length * 8 / line_rate * 1e9


def pause_for_rate(packet_size: int, target_rate: float, line_rate: float = DEFAULT_LINE_RATE) -> int:
    """Pause after a packet, in whole ns, that brings the mean rate down to
    ``target_rate`` bits/s. Zero when the target is at or above line rate."""
    if target_rate <= 0:
        raise ValueError("target_rate must be > 0")
    if math.isinf(target_rate):
        return 0
    period = packet_size * 8 / target_rate * 1e9
    return max(0, round(period - wire_time_ns(packet_size, line_rate)))


def rate_for_pps(pps: float, packet_size: int) -> float:
    """Bits/s corresponding to ``pps`` packets of ``packet_size`` payload bytes."""
    return pps * packet_size * 8


class PatternGenerator:
    """Stateful generator: hands out consecutive chunks of the pattern stream.

    The pattern continues across packet and block boundaries; only the chunk
    lengths restart with each block.
    """

    def __init__(self, config: GeneratorConfig):
        config.validate(capacity=max(config.packet_size, 1))
        self.config = config
        self.lengths = np.asarray(split_block(config.block_size, config.packet_size), dtype=np.int64)
        self._prefix = np.concatenate([[0], np.cumsum(self.lengths)[:-1]]).astype(np.int64)
        period = config.pattern.period()
        self.period_len = len(period)
        reps = 1 + -(-_TILE_SLACK // self.period_len)
        self._tiled = np.tile(period, reps)
        self.chunk_index = 0  # chunks handed out so far

    @property
    def chunks_per_block(self) -> int:
        return len(self.lengths)

    @property
    def stream_offset(self) -> int:
        return self.offset_of(self.chunk_index)

    def offset_of(self, chunk_index):
        """Byte offset in the pattern stream of a chunk (int or array)."""
        k = len(self.lengths)
        return (chunk_index // k) * self.config.block_size + self._prefix[chunk_index % k]

    def stream_bytes(self, offset: int, length: int) -> np.ndarray:
        """``length`` bytes of the pattern stream from ``offset``; a view when possible."""
        start = offset % self.period_len
        if start + length <= len(self._tiled):
            return self._tiled[start:start + length]
        idx = (start + np.arange(length)) % self.period_len
        return self._tiled[idx]

    def peek(self, count: int, start: int | None = None):
        """Lengths, stream offsets and block-end flags of the next ``count`` chunks."""
        c = (self.chunk_index if start is None else start) + np.arange(count, dtype=np.int64)
        k = len(self.lengths)
        return self.lengths[c % k], self.offset_of(c), (c % k) == k - 1

    def next_payload(self) -> PayloadChunk:
        lengths, offsets, last = self.peek(1)
        self.chunk_index += 1
        return PayloadChunk(self.stream_bytes(int(offsets[0]), int(lengths[0])), bool(last[0]))

    def advance(self, count: int) -> None:
        self.chunk_index += count


def reference_stream(pattern: Pattern, offset: int, length: int) -> bytes:
    """Slow, direct evaluation of the pattern stream used as a test oracle."""
    if isinstance(pattern, Counting16):
        order = "big" if pattern.big_endian else "little"
        out = bytearray()
        for pos in range(offset, offset + length):
            word = (pos // 2) & 0xFFFF
            out.append(word.to_bytes(2, order)[pos % 2])
        return bytes(out)
    if isinstance(pattern, ConstantByte):
        return bytes([pattern.value]) * length
    period = pattern.period()
    return bytes(period[(offset + np.arange(length)) % len(period)])
