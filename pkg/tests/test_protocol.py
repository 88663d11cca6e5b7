import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dropstream.protocol import (
    DECODE_ERROR_KINDS, HEADER_SIZE, DropHeader, HeaderEncodeError, InvalidFlags, PayloadLengthMismatch,
    TruncatedHeader, UnsupportedVersion, decode_header, decode_header_rows, encode_header, id_distance,
    id_distances, payload_capacity,
)

U64 = 1 << 64


def test_all_zero_header_bytes():
    raw = encode_header(DropHeader())
    assert raw == bytes.fromhex("01 00 0000 0000 0000 0000000000000000")
    assert len(raw) == HEADER_SIZE


def test_payload_len_and_id_fields_in_network_order():
    raw = encode_header(DropHeader(stream_id=7, payload_len=2000, packet_id=1))
    assert raw[2:4] == b"\x00\x07"
    assert raw[4:6] == bytes.fromhex("07D0")
    assert raw[8:16] == bytes.fromhex("0000000000000001")


def test_encode_into_buffer_stays_inside_header():
    buf = bytearray(b"\xAA" * 40)
    assert encode_header(DropHeader(stream_id=3, packet_id=9), buf, offset=8) == 16
    assert buf[:8] == b"\xAA" * 8 and buf[24:] == b"\xAA" * 16
    assert decode_header(buf, 8).packet_id == 9


@pytest.mark.parametrize("h,field", [
    (DropHeader(flags=1), "flags"),
    (DropHeader(version=2), "version"),
    (DropHeader(stream_id=1 << 16), "stream_id"),
    (DropHeader(packet_id=U64), "packet_id"),
    (DropHeader(payload_len=-1), "payload_len"),
])
def test_encode_names_violated_field(h, field):
    with pytest.raises(HeaderEncodeError) as info:
        encode_header(h)
    assert info.value.field == field


def test_encode_rejects_payload_over_capacity():
    with pytest.raises(HeaderEncodeError):
        encode_header(DropHeader(payload_len=2033), max_payload=payload_capacity(2048))


def test_encode_needs_room():
    with pytest.raises(HeaderEncodeError):
        encode_header(DropHeader(), bytearray(10))


def test_decode_minimal():
    assert decode_header(b"\x01" + bytes(15)) == DropHeader()


def test_decode_errors_are_distinct():
    with pytest.raises(TruncatedHeader):
        decode_header(bytes(10))
    with pytest.raises(UnsupportedVersion):
        decode_header(b"\x02" + bytes(15))
    with pytest.raises(InvalidFlags):
        decode_header(b"\x01\x01" + bytes(14))
    raw = encode_header(DropHeader(payload_len=2000))
    with pytest.raises(PayloadLengthMismatch):
        decode_header(raw + bytes(1999))
    assert decode_header(raw + bytes(2000)).payload_len == 2000
    assert len(set(DECODE_ERROR_KINDS)) == 4


headers = st.builds(DropHeader, stream_id=st.integers(0, 0xFFFF), packet_id=st.integers(0, U64 - 1),
                    payload_len=st.integers(0, 2032))


@given(headers)
def test_roundtrip_property(h):
    assert decode_header(encode_header(h) + bytes(h.payload_len)) == h


def test_roundtrip_1e5_random_headers():
    rng = np.random.default_rng(12)
    n = 100_000
    sids = rng.integers(0, 1 << 16, n)
    pids = rng.integers(0, 1 << 63, n, dtype=np.uint64) * np.uint64(2) + rng.integers(0, 2, n, dtype=np.uint64)
    plens = rng.integers(0, 2033, n)
    for sid, pid, pl in zip(sids.tolist(), pids.tolist(), plens.tolist()):
        h = DropHeader(stream_id=sid, packet_id=pid, payload_len=pl)
        raw = encode_header(h)
        # independent reading of the layout
        assert struct.unpack("!BBHHHQ", raw) == (1, 0, sid, pl, 0, pid)
        assert decode_header(raw + bytes(pl)) == h


def test_distance_examples():
    assert id_distance(41, 42) == 1
    assert id_distance(41, 45) == 4
    assert id_distance(U64 - 1, 0) == 1
    assert id_distance(5, 5) == 0
    assert id_distance(5, 3) == -2


def _wide_oracle(prev, nxt):
    # plain big-integer arithmetic: pick the representative of nxt - prev closest to zero
    d = nxt - prev
    while d >= 2**63:
        d -= 2**64
    while d < -(2**63):
        d += 2**64
    return d


@given(st.integers(0, U64 - 1), st.integers(-(2**63) + 1, 2**63 - 1))
def test_distance_matches_wide_integer_oracle(a, k):
    b = (a + k) % U64
    assert id_distance(a, b) == k == _wide_oracle(a, b)


@given(st.integers(0, U64 - 1), st.lists(st.integers(0, U64 - 1), max_size=50))
def test_vectorised_distances_agree(prev, ids):
    got = id_distances(prev, np.array(ids, dtype=np.uint64)).tolist()
    want = [id_distance(p, n) for p, n in zip([prev] + ids[:-1], ids)]
    assert got == want


def test_decode_rows_flags_each_kind():
    rows = np.zeros((5, 40), np.uint8)
    for k in range(5):
        rows[k, :16] = np.frombuffer(encode_header(DropHeader(stream_id=k, packet_id=k, payload_len=4)), np.uint8)
    rows[1, 0] = 9  # version
    rows[2, 1] = 1  # flags
    lengths = np.array([20, 20, 20, 19, 10])  # row 3 too short for payload, row 4 truncated
    headers, err = decode_header_rows(rows, lengths)
    kinds = [None if e == 0 else DECODE_ERROR_KINDS[e - 1] for e in err]
    assert kinds == [None, "version", "flags", "payload_len", "truncated"]
    assert headers["stream_id"][0] == 0 and headers["packet_id"][0] == 0


def test_payload_capacity():
    assert payload_capacity(2048) == 2032
    assert payload_capacity(2048, raw_frame=True) == 1990
    with pytest.raises(ValueError):
        payload_capacity(4096)
