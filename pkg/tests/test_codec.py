import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoibench.codec import (
    ConnAck,
    Connect,
    Disconnect,
    EncodeError,
    MalformedPacket,
    NeedMoreData,
    PacketReader,
    PubAck,
    Publish,
    SubAck,
    Subscribe,
    decode_packet,
    decode_remaining_length,
    encode_packet,
    encode_remaining_length,
)

# Vectors written out by hand from the MQTT 3.1.1 packet tables.
VECTORS = [
    (Connect("c1", keep_alive=60, clean_session=True),
     "10 0E 00 04 4D 51 54 54 04 02 00 3C 00 02 63 31"),
    (PubAck(1), "40 02 00 01"),
    (Publish("t", b"a", qos=1, packet_id=1), "32 06 00 01 74 00 01 61"),
    (Disconnect(), "E0 00"),
    (ConnAck(0), "20 02 00 00"),
    (Subscribe(7, "t", 1), "82 06 00 07 00 01 74 01"),
    (SubAck(7, 0x80), "90 03 00 07 80"),
    (Publish("ab", b"", qos=0), "30 04 00 02 61 62"),
]


@pytest.mark.parametrize("packet,hexstr", VECTORS)
def test_bit_exact_vectors(packet, hexstr):
    wire = bytes.fromhex(hexstr)
    assert encode_packet(packet) == wire
    assert decode_packet(wire) == (packet, len(wire))


@pytest.mark.parametrize("n,hexstr", [
    (0, "00"), (127, "7F"), (128, "80 01"), (321, "C1 02"),
    (16_383, "FF 7F"), (16_384, "80 80 01"), (2_097_151, "FF FF 7F"),
    (2_097_152, "80 80 80 01"), (268_435_455, "FF FF FF 7F"),
])
def test_remaining_length(n, hexstr):
    raw = bytes.fromhex(hexstr)
    assert encode_remaining_length(n) == raw
    assert decode_remaining_length(raw) == (n, len(raw))


@pytest.mark.parametrize("n", [-1, 268_435_456])
def test_remaining_length_out_of_range(n):
    with pytest.raises(EncodeError):
        encode_remaining_length(n)


def test_remaining_length_band_monotone():
    bands = [0, 127, 128, 16_383, 16_384, 2_097_151, 2_097_152, 268_435_455]
    sizes = [len(encode_remaining_length(n)) for n in bands]
    assert sizes == sorted(sizes)
    assert sizes == [1, 1, 2, 2, 3, 3, 4, 4]


def test_truncated_publish_needs_more_data():
    wire = encode_packet(Publish("topic", b"payload", qos=1, packet_id=9))
    for cut in range(len(wire)):
        with pytest.raises(NeedMoreData):
            decode_packet(wire[:cut])


def test_trailing_bytes_untouched():
    wire = bytes.fromhex("40 02 00 01") + b"\xff\xff"
    assert decode_packet(wire) == (PubAck(1), 4)


@pytest.mark.parametrize("hexstr", [
    "00 00",            # reserved type 0
    "50 02 00 01",      # PUBREC, unsupported
    "FF FF FF FF 7F",   # varint longer than 4 bytes (type 15)
    "80 06 00 07 00 01 74 01",  # SUBSCRIBE with wrong flags
    "34 06 00 01 74 00 01 61",  # QoS 2 publish
    "40 02 00 00",      # packet id zero
    "40 03 00 01 00",   # trailing byte inside PUBACK
    "E0 80 80 80 80",   # 5-byte varint
])
def test_malformed(hexstr):
    with pytest.raises(MalformedPacket):
        decode_packet(bytes.fromhex(hexstr))


def test_encode_rejects_qos2_and_bad_ids():
    with pytest.raises(EncodeError):
        encode_packet(Publish("t", b"", qos=2, packet_id=1))
    with pytest.raises(EncodeError):
        encode_packet(Publish("t", b"", qos=1))
    with pytest.raises(EncodeError):
        encode_packet(Publish("t", b"", qos=0, packet_id=3))
    with pytest.raises(EncodeError):
        encode_packet(PubAck(0))
    with pytest.raises(EncodeError):
        encode_packet(Connect("x" * 65_536))


def test_reader_handles_arbitrary_chunking():
    pkts = [Connect("abc"), Publish("a/b", b"x" * 300, qos=1, packet_id=5), PubAck(5), Disconnect()]
    stream = b"".join(encode_packet(p) for p in pkts)
    reader = PacketReader()
    out = []
    for i in range(0, len(stream), 7):
        out.extend(reader.feed(stream[i:i + 7]))
    assert out == pkts
    assert reader.pending == 0


text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00+#"),
               min_size=1, max_size=40)
pid = st.integers(1, 65535)
packets = st.one_of(
    st.builds(Connect, st.text(max_size=30), st.integers(0, 65535), st.booleans()),
    st.builds(ConnAck, st.integers(0, 5), st.booleans()),
    st.builds(lambda t, p, r: Publish(t, p, 0, None, False, r), text, st.binary(max_size=2000), st.booleans()),
    st.builds(lambda t, p, i, d, r: Publish(t, p, 1, i, d, r), text, st.binary(max_size=2000), pid, st.booleans(), st.booleans()),
    st.builds(PubAck, pid),
    st.builds(Subscribe, pid, text, st.integers(0, 1)),
    st.builds(SubAck, pid, st.sampled_from([0, 1, 0x80])),
    st.just(Disconnect()),
)


@settings(max_examples=500, deadline=None)
@given(packets)
def test_round_trip_property(p):
    wire = encode_packet(p)
    assert decode_packet(wire) == (p, len(wire))
    with pytest.raises(NeedMoreData):
        decode_packet(wire[:-1])
