"""MQTT 3.1.1 encoder/decoder for the packet subset used by the workbench.

Only protocol level 4 is spoken.  Supported control packets are CONNECT,
CONNACK, PUBLISH (QoS 0/1), PUBACK, SUBSCRIBE (single filter), SUBACK and
DISCONNECT.  Everything else is rejected as malformed.

The decoder is incremental: :func:`decode_packet` raises :class:`NeedMoreData`
when the buffer holds only a prefix of a packet, which is not an error for a
stream reader.  :class:`PacketReader` wraps that contract for transports that
deliver arbitrary chunks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Tuple, Union

MAX_REMAINING_LENGTH = 268_435_455
MAX_STRING_LENGTH = 65_535
PROTOCOL_NAME = b"MQTT"
PROTOCOL_LEVEL = 4
SUBACK_FAILURE = 0x80


class CodecError(ValueError):
    """Base class for codec failures."""


class EncodeError(CodecError):
    """Packet cannot be represented on the wire."""


class MalformedPacket(CodecError):
    """Bytes violate the protocol (unknown type, bad flags, bad varint...)."""


class NeedMoreData(Exception):
    """The buffer holds an incomplete packet; retry with more bytes.

    Deliberately not a :class:`CodecError`: truncation is a normal state for
    a stream decoder.
    """


class PacketType(IntEnum):
    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    PUBACK = 4
    SUBSCRIBE = 8
    SUBACK = 9
    DISCONNECT = 14


@dataclass(frozen=True)
class Connect:
    client_id: str
    keep_alive: int = 60
    clean_session: bool = True


@dataclass(frozen=True)
class ConnAck:
    return_code: int = 0
    session_present: bool = False


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes = b""
    qos: int = 0
    packet_id: Optional[int] = None
    dup: bool = False
    retain: bool = False


@dataclass(frozen=True)
class PubAck:
    packet_id: int


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    topic_filter: str
    requested_qos: int = 0


@dataclass(frozen=True)
class SubAck:
    packet_id: int
    granted_qos: int  # 0, 1 or SUBACK_FAILURE


@dataclass(frozen=True)
class Disconnect:
    pass


MqttPacket = Union[Connect, ConnAck, Publish, PubAck, Subscribe, SubAck, Disconnect]


# -- primitives ---------------------------------------------------------------


def encode_remaining_length(n: int) -> bytes:
    """Encode ``n`` as the MQTT variable byte integer (1 to 4 bytes).

    >>> encode_remaining_length(321).hex()
    'c102'
    """
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise EncodeError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        digit = n & 0x7F
        n >>= 7
        if n:
            out.append(digit | 0x80)
        else:
            out.append(digit)
            return bytes(out)


def decode_remaining_length(buf: bytes, offset: int = 0) -> Tuple[int, int]:
    """Return ``(value, bytes_used)`` for the varint starting at ``offset``."""
    value = 0
    for i in range(4):
        pos = offset + i
        if pos >= len(buf):
            raise NeedMoreData()
        b = buf[pos]
        value |= (b & 0x7F) << (7 * i)
        if not b & 0x80:
            return value, i + 1
    raise MalformedPacket("remaining length longer than 4 bytes")


def _encode_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > MAX_STRING_LENGTH:
        raise EncodeError(f"string of {len(raw)} bytes exceeds {MAX_STRING_LENGTH}")
    return struct.pack("!H", len(raw)) + raw


def _check_packet_id(pid: Optional[int]) -> int:
    if pid is None or not 1 <= pid <= 0xFFFF:
        raise EncodeError(f"packet id {pid!r} not in 1..65535")
    return pid


def _frame(first_byte: int, body: bytes) -> bytes:
    return bytes([first_byte]) + encode_remaining_length(len(body)) + body


# -- encoding -----------------------------------------------------------------


def encode_packet(p: MqttPacket) -> bytes:
    """Serialize ``p`` into MQTT 3.1.1 wire bytes."""
    if isinstance(p, Publish):
        if p.qos not in (0, 1):
            raise EncodeError(f"QoS {p.qos} not supported")
        if not p.topic or "+" in p.topic or "#" in p.topic:
            raise EncodeError(f"invalid publish topic {p.topic!r}")
        header = 0x30 | (p.qos << 1) | (0x08 if p.dup else 0) | (0x01 if p.retain else 0)
        body = _encode_string(p.topic)
        if p.qos:
            body += struct.pack("!H", _check_packet_id(p.packet_id))
        elif p.packet_id is not None:
            raise EncodeError("QoS 0 publish must not carry a packet id")
        elif p.dup:
            raise EncodeError("QoS 0 publish must not set DUP")
        return _frame(header, body + bytes(p.payload))
    if isinstance(p, PubAck):
        return _frame(0x40, struct.pack("!H", _check_packet_id(p.packet_id)))
    if isinstance(p, Connect):
        if not 0 <= p.keep_alive <= 0xFFFF:
            raise EncodeError(f"keep alive {p.keep_alive} out of range")
        flags = 0x02 if p.clean_session else 0x00
        body = (
            _encode_string(PROTOCOL_NAME.decode())
            + bytes([PROTOCOL_LEVEL, flags])
            + struct.pack("!H", p.keep_alive)
            + _encode_string(p.client_id)
        )
        return _frame(0x10, body)
    if isinstance(p, ConnAck):
        if not 0 <= p.return_code <= 5:
            raise EncodeError(f"CONNACK return code {p.return_code} out of range")
        return _frame(0x20, bytes([int(p.session_present), p.return_code]))
    if isinstance(p, Subscribe):
        if p.requested_qos not in (0, 1):
            raise EncodeError(f"QoS {p.requested_qos} not supported")
        if not p.topic_filter:
            raise EncodeError("empty topic filter")
        body = (
            struct.pack("!H", _check_packet_id(p.packet_id))
            + _encode_string(p.topic_filter)
            + bytes([p.requested_qos])
        )
        return _frame(0x82, body)
    if isinstance(p, SubAck):
        if p.granted_qos not in (0, 1, SUBACK_FAILURE):
            raise EncodeError(f"invalid SUBACK code {p.granted_qos}")
        return _frame(0x90, struct.pack("!HB", _check_packet_id(p.packet_id), p.granted_qos))
    if isinstance(p, Disconnect):
        return b"\xe0\x00"
    raise EncodeError(f"unsupported packet {p!r}")


# -- decoding -----------------------------------------------------------------


class _Body:
    """Cursor over a packet body; every read is bounds-checked."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise MalformedPacket("field runs past end of packet")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedPacket("invalid UTF-8 string") from exc

    def rest(self) -> bytes:
        out = self.buf[self.pos:]
        self.pos = len(self.buf)
        return out

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise MalformedPacket("trailing bytes inside packet")


def _packet_id(body: _Body) -> int:
    pid = body.u16()
    if pid == 0:
        raise MalformedPacket("packet id 0")
    return pid


def _decode_body(ptype: int, flags: int, body: _Body) -> MqttPacket:
    if ptype == PacketType.PUBLISH:
        qos = (flags >> 1) & 0x03
        if qos > 1:
            raise MalformedPacket(f"QoS {qos} not supported")
        dup = bool(flags & 0x08)
        if dup and qos == 0:
            raise MalformedPacket("DUP set on QoS 0 publish")
        topic = body.string()
        pid = _packet_id(body) if qos else None
        return Publish(topic, body.rest(), qos, pid, dup, bool(flags & 0x01))

    expected_flags = 0x02 if ptype == PacketType.SUBSCRIBE else 0x00
    if flags != expected_flags:
        raise MalformedPacket(f"bad flags {flags:#x} for packet type {ptype}")

    if ptype == PacketType.PUBACK:
        pkt: MqttPacket = PubAck(_packet_id(body))
    elif ptype == PacketType.CONNECT:
        name = body.take(body.u16())
        if name != PROTOCOL_NAME:
            raise MalformedPacket(f"protocol name {name!r}")
        level = body.u8()
        if level != PROTOCOL_LEVEL:
            raise MalformedPacket(f"protocol level {level}")
        cflags = body.u8()
        if cflags & ~0x02:
            raise MalformedPacket(f"unsupported CONNECT flags {cflags:#x}")
        keep_alive = body.u16()
        pkt = Connect(body.string(), keep_alive, bool(cflags & 0x02))
    elif ptype == PacketType.CONNACK:
        ack_flags = body.u8()
        if ack_flags & ~0x01:
            raise MalformedPacket("reserved CONNACK flags set")
        code = body.u8()
        if code > 5:
            raise MalformedPacket(f"CONNACK return code {code}")
        pkt = ConnAck(code, bool(ack_flags))
    elif ptype == PacketType.SUBSCRIBE:
        pid = _packet_id(body)
        topic = body.string()
        qos = body.u8()
        if qos > 1:
            raise MalformedPacket(f"requested QoS {qos} not supported")
        pkt = Subscribe(pid, topic, qos)
    elif ptype == PacketType.SUBACK:
        pid = _packet_id(body)
        code = body.u8()
        if code not in (0, 1, SUBACK_FAILURE):
            raise MalformedPacket(f"SUBACK code {code:#x}")
        pkt = SubAck(pid, code)
    elif ptype == PacketType.DISCONNECT:
        pkt = Disconnect()
    else:
        raise MalformedPacket(f"unsupported packet type {ptype}")
    body.done()
    return pkt


def decode_packet(buf: bytes) -> Tuple[MqttPacket, int]:
    """Decode the packet at the start of ``buf``.

    Returns the packet and the number of bytes it occupied; bytes after it
    are not inspected.  Raises :class:`NeedMoreData` on a truncated prefix
    and :class:`MalformedPacket` on protocol violations.
    """
    if not buf:
        raise NeedMoreData()
    first = buf[0]
    ptype, flags = first >> 4, first & 0x0F
    if ptype not in PacketType.__members__.values():
        raise MalformedPacket(f"unknown packet type {ptype}")
    length, used = decode_remaining_length(buf, 1)
    end = 1 + used + length
    if len(buf) < end:
        raise NeedMoreData()
    body = _Body(bytes(buf[1 + used:end]))
    return _decode_body(ptype, flags, body), end


class PacketReader:
    """Accumulates stream chunks and yields complete packets in order."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> List[MqttPacket]:
        self._buf += chunk
        out: List[MqttPacket] = []
        while self._buf:
            try:
                pkt, used = decode_packet(self._buf)
            except NeedMoreData:
                break
            del self._buf[:used]
            out.append(pkt)
        return out

    @property
    def pending(self) -> int:
        """Bytes buffered but not yet forming a complete packet."""
        return len(self._buf)
