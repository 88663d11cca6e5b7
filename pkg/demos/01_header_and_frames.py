"""
Headers and frames
==================

A DROP packet is a 16-byte header followed by payload. In raw-frame mode
the packet rides inside Ethernet, IPv4 and UDP headers that the sender
builds itself and the receiver parses itself.
"""

import numpy as np

from dropstream import DropHeader, decode_header, encode_header
from dropstream.frames import Endpoint, build_frame, parse_frame, parse_mac
from dropstream.patterns import Counting16, reference_stream

# %%
# Encode a header for stream 7 carrying packet 42 with 2000 payload bytes.

h = DropHeader(stream_id=7, payload_len=2000, packet_id=42)
raw = encode_header(h)
print(raw.hex(" "))

# %%
# The payload is the counting pattern: little-endian 16-bit words 0, 1, 2, ...

payload = reference_stream(Counting16(), 0, 2000)
print(payload[:16].hex(" "))
print(decode_header(raw + payload))

# %%
# Wrap it in a frame. The UDP checksum covers a pseudo-header, so changing
# one payload bit is caught on the way in.

src = Endpoint(parse_mac("02:00:00:00:00:01"), "10.0.0.1", 40000)
dst = Endpoint(parse_mac("02:00:00:00:00:02"), "10.0.0.2", 9000)
frame = build_frame(raw + payload, src, dst)
p = parse_frame(frame)
print(len(frame), "byte frame, payload at", p.payload_offset, "to port", p.dst_port)

broken = bytearray(frame)
broken[100] ^= 0x01
try:
    parse_frame(bytes(broken))
except Exception as exc:
    print("rejected:", type(exc).__name__, exc)

# %%
# Slots hold 2048 bytes, which bounds the payload per packet.

from dropstream.protocol import payload_capacity

print("datagram payload capacity", payload_capacity(2048))
print("raw frame payload capacity", payload_capacity(2048, raw_frame=True))
