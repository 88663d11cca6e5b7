import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropstream.patterns import Counting16, reference_stream
from dropstream.verify import WordHistogram, check_sum, check_uniform, read_pgm, render_histogram, to_gray


def _hist(data: bytes, **kw):
    return WordHistogram(**kw).accumulate(data)


def test_first_words_land_in_first_bins():
    h = _hist(bytes([0, 0, 1, 0, 2, 0, 3, 0]))
    assert h.counts[:4].tolist() == [1, 1, 1, 1] and h.total_words == 4
    assert h.grid[0, :4].tolist() == [1, 1, 1, 1]


def test_empty_payload_is_noop():
    h = _hist(b"")
    assert h.total_words == 0 and h.trailing_byte_errors == 0
    assert not check_uniform(h).passed


def test_odd_trailing_byte_is_counted():
    h = _hist(b"\x01\x00\x02")
    assert h.total_words == 1 and h.trailing_byte_errors == 1


def test_endianness():
    assert _hist(b"\x01\x02").counts[0x0201] == 1
    assert _hist(b"\x01\x02", big_endian=True).counts[0x0102] == 1


def test_one_block_fills_8192_bins():
    h = _hist(reference_stream(Counting16(), 0, 16384))
    assert (h.counts[:8192] == 1).all() and h.counts[8192:].sum() == 0
    u = check_uniform(h)
    assert u.spread == 1 and u.contiguous and u.areas == 2 and u.passed


def test_full_periods_are_flat():
    h = _hist(reference_stream(Counting16(), 0, 131072 * 2))
    u = check_uniform(h)
    assert (u.max, u.min, u.spread, u.areas) == (2, 2, 0, 1) and u.passed


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 300_000))
def test_any_lossless_prefix_is_uniform(blocks, words):
    # the raised range has length (bytes / 2) mod 65536
    n = blocks * 16384 // 2 + words
    h = WordHistogram()
    h.counts += np.bincount(np.arange(n) % 65536, minlength=65536).astype(np.uint64)
    u = check_uniform(h)
    assert u.passed
    assert int((h.counts == u.max).sum()) == (n % 65536 or 65536)


@settings(max_examples=60, deadline=None)
@given(st.integers(70_000, 400_000), st.data())
def test_single_drop_detected_outside_blind_spots(n_words, data):
    # drop one 1000-word packet; the loss is invisible only when what is left
    # looks like a shorter lossless run: the gap touches the start of the
    # transfer, ends where it ends (mod 65536), or the transfer is whole periods
    start = data.draw(st.sampled_from([0, n_words - 1000 - 65536 * (n_words // 65536 - 1)])
                      | st.integers(0, n_words - 1000))
    blind = start % 65536 == 0 or (n_words - start - 1000) % 65536 == 0 or n_words % 65536 == 0
    words = np.arange(n_words) % 65536
    kept = np.concatenate([words[:start], words[start + 1000:]])
    h = WordHistogram()
    h.counts += np.bincount(kept, minlength=65536).astype(np.uint64)
    assert check_uniform(h).passed == blind


def test_check_sum():
    data = reference_stream(Counting16(), 0, 5000)
    h = _hist(data)
    assert check_sum(h, 5000)
    assert not check_sum(h, 5002)


def test_slot_kernel_matches_plain_bincount():
    rng = np.random.default_rng(0)
    slots = rng.integers(0, 256, (16, 256), dtype=np.uint8)
    idx = np.array([3, 0, 7, 15])
    for offsets in (np.array([16, 16, 16, 16]), np.array([42, 43, 16, 17])):
        lengths = np.array([100, 64, 11, 0])
        h = WordHistogram()
        h.accumulate_slots(slots, idx, offsets, lengths)
        want = WordHistogram()
        for i, o, ln in zip(idx, offsets, lengths):
            want.accumulate(slots[i, o:o + ln].copy())
        assert (h.counts == want.counts).all()
        assert h.trailing_byte_errors == want.trailing_byte_errors == 1


def test_render(tmp_path):
    h = _hist(reference_stream(Counting16(), 0, 131072))
    pgm, csv = render_histogram(h, tmp_path, 3)
    assert pgm.name == "stream-3-hist.pgm"
    img = read_pgm(pgm)
    assert img.shape == (256, 256) and (img == img[0, 0]).all()  # uniform -> one gray level
    assert np.loadtxt(csv, delimiter=",").sum() == 65536
    h2 = _hist(reference_stream(Counting16(), 0, 16384))
    g = to_gray(h2)
    assert g.min() == 0 and g.max() == 255
