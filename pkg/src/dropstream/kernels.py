"""Compiled inner loops that touch every payload byte."""

import numba
import numpy as np


@numba.njit(nogil=True, cache=True)
def histogram_slots(slots16, idx, word_offset, word_count, big_endian, hist):
    """Count 16-bit words of each slot in place.

    ``slots16`` is the slot array viewed as native uint16; payloads start at
    an even byte offset, so ``word_offset`` addresses them directly.
    """
    for k in range(idx.shape[0]):
        row = slots16[idx[k]]
        o = word_offset[k]
        if big_endian:
            for j in range(word_count[k]):
                w = row[o + j]
                hist[((w & 0xFF) << 8) | (w >> 8)] += 1
        else:
            for j in range(word_count[k]):
                hist[row[o + j]] += 1


@numba.njit(nogil=True, cache=True)
def histogram_slots_bytes(slots, idx, byte_offset, word_count, big_endian, hist):
    """Same as :func:`histogram_slots` for payloads at odd byte offsets."""
    for k in range(idx.shape[0]):
        row = slots[idx[k]]
        o = byte_offset[k]
        for j in range(word_count[k]):
            a = np.uint32(row[o + 2 * j])
            b = np.uint32(row[o + 2 * j + 1])
            if big_endian:
                hist[(a << 8) | b] += 1
            else:
                hist[(b << 8) | a] += 1
