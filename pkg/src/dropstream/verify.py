"""Payload completeness checks based on a 16-bit word histogram.

Each 16-bit payload word increments one cell of a 256x256 array indexed by
(upper byte, lower byte). For a lossless counting-pattern transfer every word
value occurs equally often, except that a run stopping mid-period leaves one
contiguous range of words exactly one count higher. Lost packets show up as
extra ranges with lower counts.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import histogram_slots, histogram_slots_bytes

NATIVE_LITTLE = sys.byteorder == "little"


class WordHistogram:
    def __init__(self, big_endian: bool = False):
        self.counts = np.zeros(65536, dtype=np.uint64)
        self.big_endian = big_endian
        self.trailing_byte_errors = 0
        self.payload_bytes = 0

    @property
    def grid(self) -> np.ndarray:
        """256x256 view indexed ``[upper byte, lower byte]``."""
        return self.counts.reshape(256, 256)

    @property
    def total_words(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, payload) -> "WordHistogram":
        data = np.frombuffer(payload, dtype=np.uint8) if not isinstance(payload, np.ndarray) else payload
        n = len(data)
        self.payload_bytes += n
        if n % 2:
            self.trailing_byte_errors += 1
            data = data[:-1]
        if len(data):
            words = data.view(">u2" if self.big_endian else "<u2")
            self.counts += np.bincount(words, minlength=65536).astype(np.uint64)
        return self

    def accumulate_slots(self, slots: np.ndarray, idx: np.ndarray, offsets: np.ndarray,
                         lengths: np.ndarray) -> None:
        """Histogram payloads that live inside ring slots, without copying them."""
        if len(idx) == 0:
            return
        lengths = np.asarray(lengths, dtype=np.int64)
        offsets = np.asarray(offsets, dtype=np.int64)
        self.payload_bytes += int(lengths.sum())
        self.trailing_byte_errors += int(np.count_nonzero(lengths & 1))
        words = lengths >> 1
        idx = np.asarray(idx, dtype=np.int64)
        if NATIVE_LITTLE and not np.any(offsets & 1) and slots.shape[1] % 2 == 0:
            histogram_slots(slots.view(np.uint16), idx, offsets >> 1, words, self.big_endian, self.counts)
        else:
            histogram_slots_bytes(slots, idx, offsets, words, self.big_endian, self.counts)

    def merge(self, other: "WordHistogram") -> "WordHistogram":
        self.counts += other.counts
        self.trailing_byte_errors += other.trailing_byte_errors
        self.payload_bytes += other.payload_bytes
        return self

    def copy(self) -> "WordHistogram":
        h = WordHistogram(self.big_endian)
        h.merge(self)
        return h


def accumulate(hist: WordHistogram, payload) -> WordHistogram:
    return hist.accumulate(payload)


@dataclass(frozen=True)
class Uniformity:
    max: int
    min: int
    spread: int
    areas: int  # homogeneous runs around the circular word axis
    contiguous: bool  # bins at the maximum form one circular run
    passed: bool

    def to_dict(self) -> dict:
        return dict(max=self.max, min=self.min, spread=self.spread, areas=self.areas,
                    contiguous=self.contiguous, passed=self.passed)


def _circular_runs(mask: np.ndarray) -> int:
    """Number of maximal runs of True in a circular boolean array."""
    if mask.all():
        return 1
    if not mask.any():
        return 0
    starts = mask & ~np.roll(mask, 1)
    return int(starts.sum())


def check_uniform(hist: WordHistogram) -> Uniformity:
    """Spread test plus a contiguity test on the bins holding the maximum.

    Blind spot: a lost packet whose words end exactly where the transfer ends
    (modulo 65536 words) looks like a shorter lossless run.
    """
    c = hist.counts
    if not c.any():  # nothing received: no evidence of completeness
        return Uniformity(0, 0, 0, 0, False, False)
    hi = int(c.max())
    lo = int(c.min())
    spread = hi - lo
    at_max = c == hi
    max_runs = _circular_runs(at_max)
    changes = int(np.count_nonzero(c != np.roll(c, 1)))
    areas = 1 if changes == 0 else changes
    contiguous = max_runs == 1
    return Uniformity(hi, lo, spread, areas, contiguous, spread <= 1 and contiguous)


def check_sum(hist: WordHistogram, bytes_received: int) -> bool:
    """Total word count equals half the number of payload bytes received."""
    return 2 * hist.total_words == bytes_received


def to_gray(hist: WordHistogram) -> np.ndarray:
    """Counters mapped linearly from min..max onto 0..255 (constant -> 255)."""
    g = hist.grid.astype(np.float64)
    lo, hi = g.min(), g.max()
    if hi == lo:
        return np.full((256, 256), 255, dtype=np.uint8)
    return np.rint((g - lo) * 255.0 / (hi - lo)).astype(np.uint8)


def render_histogram(hist: WordHistogram, out_dir, stream_id: int) -> tuple[Path, Path]:
    """Write ``stream-<id>-hist.pgm`` (binary P5) and ``stream-<id>-hist.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pgm = out_dir / f"stream-{stream_id}-hist.pgm"
    csv_path = out_dir / f"stream-{stream_id}-hist.csv"
    with open(pgm, "wb") as fh:
        fh.write(b"P5\n256 256\n255\n")
        fh.write(to_gray(hist).tobytes())
    np.savetxt(csv_path, hist.grid, fmt="%d", delimiter=",")
    return pgm, csv_path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
