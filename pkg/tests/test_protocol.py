import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtping.rtt.protocol import (
    DEFAULT_PAYLOAD_SIZE,
    HEADER_SIZE,
    MAGIC,
    MAX_PAYLOAD_SIZE,
    ProbeDecodeError,
    ProbePacket,
    decode_probe,
    encode_into,
    encode_probe,
    peek_sequence,
)

u64 = st.integers(0, 2**64 - 1)


def test_layout_is_bit_exact():
    b = encode_probe(ProbePacket(0x0102030405060708, 0x1112131415161718))
    assert len(b) == DEFAULT_PAYLOAD_SIZE == 500
    assert HEADER_SIZE == 21
    assert b[:4] == b"RTPP"
    assert b[4] == 1
    assert b[5:13] == bytes(range(1, 9))
    assert b[13:21] == bytes(range(0x11, 0x19))
    assert b[21:] == bytes(479)


@given(u64, u64, st.integers(HEADER_SIZE, 2048))
def test_roundtrip(seq, t, size):
    p = ProbePacket(seq, t, size)
    assert decode_probe(encode_probe(p)) == p


def test_default_length_enforced():
    p = ProbePacket(1, 2)
    assert p.payload_size == 500
    assert len(encode_probe(p)) == 500


@pytest.mark.parametrize("size", [0, HEADER_SIZE - 1, MAX_PAYLOAD_SIZE + 1])
def test_bad_sizes(size):
    with pytest.raises(ValueError):
        ProbePacket(1, 2, size)


@pytest.mark.parametrize("kw", [{"sequence": -1}, {"sequence": 2**64}, {"client_send_time": -1}])
def test_out_of_range_fields(kw):
    args = {"sequence": 0, "client_send_time": 0, **kw}
    with pytest.raises(ValueError):
        ProbePacket(**args)


def test_short_buffer():
    with pytest.raises(ProbeDecodeError) as ei:
        decode_probe(b"RTP")
    assert ei.value.reason == "short-buffer"


def test_bad_magic():
    b = bytearray(encode_probe(ProbePacket(7, 8)))
    b[0] ^= 0xFF
    with pytest.raises(ProbeDecodeError) as ei:
        decode_probe(b)
    assert ei.value.reason == "bad-magic"


def test_bad_version():
    b = bytearray(encode_probe(ProbePacket(7, 8)))
    b[4] = 9
    with pytest.raises(ProbeDecodeError) as ei:
        decode_probe(b)
    assert ei.value.reason == "bad-version"


@given(st.binary(max_size=64))
def test_decode_never_crashes_on_garbage(data):
    try:
        p = decode_probe(data)
    except ProbeDecodeError:
        assert peek_sequence(data, len(data)) is None
    else:
        assert data[:4] == MAGIC
        assert peek_sequence(data, len(data)) == p.sequence


@given(u64, u64)
def test_encode_into_matches_encode(seq, t):
    buf = bytearray(500)
    encode_into(buf, seq, t)
    assert bytes(buf) == encode_probe(ProbePacket(seq, t))
    assert struct.unpack(">Q", buf[5:13])[0] == seq
