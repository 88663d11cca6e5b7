import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dropstream.frames import (
    FRAME_ERROR_KINDS, UDP_PAYLOAD_OFFSET, BadIPHeader, ChecksumError, Endpoint, NotIPv4, NotUDP,
    TruncatedFrame, UdpLengthError, build_frame, build_frames, internet_checksum, parse_frame, parse_frames,
    parse_mac,
)

SRC = Endpoint(parse_mac("02:00:00:00:00:01"), "10.0.0.1", 40000)
DST = Endpoint(parse_mac("02:00:00:00:00:02"), "10.0.0.2", 9000)


def test_checksum_known_vector():
    # classic RFC 1071 worked example
    data = bytes.fromhex("0001f203f4f5f6f7")
    assert internet_checksum(data) == (~0xDDF2 & 0xFFFF)


def test_empty_payload_frame():
    f = build_frame(b"", SRC, DST)
    assert len(f) == 60  # padded to the Ethernet minimum
    p = parse_frame(f)
    assert p.payload_len == 0 and len(p.payload(f)) == 0
    assert (p.src_port, p.dst_port) == (40000, 9000)


def test_payload_view_points_into_frame():
    f = build_frame(b"hello drop", SRC, DST)
    p = parse_frame(f)
    assert bytes(p.payload(f)) == b"hello drop"
    assert p.payload_offset == UDP_PAYLOAD_OFFSET


def test_ipv4_checksum_off_by_one():
    f = bytearray(build_frame(b"x" * 20, SRC, DST))
    c = struct.unpack_from("!H", f, 24)[0]
    struct.pack_into("!H", f, 24, (c + 1) & 0xFFFF)
    with pytest.raises(ChecksumError) as info:
        parse_frame(bytes(f))
    assert info.value.kind == "checksum_ipv4"


def test_typed_errors():
    good = bytearray(build_frame(b"abcd", SRC, DST))
    with pytest.raises(TruncatedFrame):
        parse_frame(good[:20])
    bad = bytearray(good)
    bad[12:14] = b"\x86\xdd"
    with pytest.raises(NotIPv4):
        parse_frame(bytes(bad))
    bad = bytearray(good)
    bad[14] = 0x65
    with pytest.raises(BadIPHeader):
        parse_frame(bytes(bad))


def _refresh_ip_checksum(f: bytearray):
    f[24:26] = b"\x00\x00"
    struct.pack_into("!H", f, 24, internet_checksum(bytes(f[14:34])))


def test_protocol_and_udp_length_errors():
    f = bytearray(build_frame(b"abcd", SRC, DST))
    f[23] = 6
    _refresh_ip_checksum(f)
    with pytest.raises(NotUDP):
        parse_frame(bytes(f))
    f = bytearray(build_frame(b"abcd", SRC, DST))
    struct.pack_into("!H", f, 38, 13)
    with pytest.raises(UdpLengthError):
        parse_frame(bytes(f))


def test_udp_checksum_error_and_zero_checksum():
    f = bytearray(build_frame(b"payload!", SRC, DST))
    f[-1 if len(f) == UDP_PAYLOAD_OFFSET + 8 else UDP_PAYLOAD_OFFSET] ^= 0x01
    with pytest.raises(ChecksumError) as info:
        parse_frame(bytes(f))
    assert info.value.kind == "checksum_udp"
    nock = build_frame(b"payload!", SRC, DST, udp_checksum=False)
    assert parse_frame(nock).payload_len == 8
    with pytest.raises(ChecksumError):
        parse_frame(nock, require_udp_checksum=True)


def _burst(n, seed=0, max_len=200):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(0, max_len, n)
    data = np.zeros((n, max(1, int(lengths.max()))), np.uint8)
    for k, ln in enumerate(lengths):
        data[k, :ln] = rng.integers(0, 256, ln, dtype=np.uint8)
    return data, lengths


def test_vectorised_build_matches_scalar_build():
    data, lengths = _burst(300, seed=1)
    frames, flen = build_frames(data, lengths, SRC, DST, np.arange(300))
    for k in range(300):
        scalar = build_frame(data[k, :lengths[k]].tobytes(), SRC, DST, ip_id=k)
        assert frames[k, :flen[k]].tobytes() == scalar


def test_vectorised_parse_matches_scalar_parse():
    data, lengths = _burst(200, seed=2)
    frames, flen = build_frames(data, lengths, SRC, DST, np.arange(200))
    rng = np.random.default_rng(3)
    # corrupt a few rows in various places
    for k in rng.choice(200, 40, replace=False):
        frames[k, rng.integers(0, flen[k])] ^= np.uint8(1 << rng.integers(0, 8))
    out = parse_frames(frames, flen)
    for k in range(200):
        try:
            p = parse_frame(frames[k, :flen[k]].tobytes())
        except Exception as exc:
            assert out.error[k] == 1 + FRAME_ERROR_KINDS.index(exc.kind), k
        else:
            assert out.error[k] == 0
            assert (out.payload_offset[k], out.payload_len[k], out.dst_port[k]) == \
                (p.payload_offset, p.payload_len, p.dst_port)


def test_parse_ignores_stale_bytes_past_length():
    data, lengths = _burst(20, seed=4, max_len=40)
    frames, flen = build_frames(data, lengths, SRC, DST, np.arange(20))
    slots = np.full((20, 128), 0xEE, np.uint8)
    slots[:, :frames.shape[1]] = np.where(np.arange(frames.shape[1]) < flen[:, None], frames, 0xEE)
    assert not parse_frames(slots, flen).error.any()


@given(st.binary(max_size=300), st.integers(1, 65535), st.integers(1, 65535))
def test_roundtrip_ports_property(payload, sport, dport):
    f = build_frame(payload, Endpoint(SRC.mac, SRC.ip, sport), Endpoint(DST.mac, DST.ip, dport))
    p = parse_frame(f)
    assert (p.src_port, p.dst_port) == (sport, dport)
    assert bytes(p.payload(f)) == payload


def test_options_fall_back_to_scalar_path():
    f = bytearray(build_frame(b"abcdef", SRC, DST))
    # insert 4 bytes of IPv4 options (NOP x4) and fix lengths/checksums
    ip = bytearray(f[14:34]) + b"\x01\x01\x01\x01"
    ip[0] = 0x46
    total = struct.unpack_from("!H", ip, 2)[0] + 4
    struct.pack_into("!H", ip, 2, total)
    ip[10:12] = b"\x00\x00"
    struct.pack_into("!H", ip, 10, internet_checksum(bytes(ip)))
    frame = bytes(f[:14]) + bytes(ip) + bytes(f[34:34 + 14])
    p = parse_frame(frame)
    assert p.payload_offset == UDP_PAYLOAD_OFFSET + 4
    rows = np.frombuffer(frame, np.uint8)[None, :].copy()
    out = parse_frames(rows, np.array([len(frame)]))
    assert out.error[0] == 0 and out.payload_offset[0] == UDP_PAYLOAD_OFFSET + 4
