"""MQTT publishers: a one-shot request client and the pipelined stream client.

The stream client runs four activities.  The producer generates messages on
an absolute-deadline schedule and pushes them into the application queue.
The sender pops, serializes and writes them.  The ack receiver decodes
incoming bytes and hands packets to the ack manager through an unbounded
channel, and the ack manager matches PUBACKs to in-flight messages.
"""

from __future__ import annotations

import asyncio
import collections
import csv
import io
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Deque, List, Optional

from .codec import (
    ConnAck,
    Connect,
    Disconnect,
    MqttPacket,
    PacketReader,
    PubAck,
    Publish,
    encode_packet,
)
from .queue import (
    EndOfQueue,
    FifoBounded,
    MessageQueue,
    PushOutcome,
    QueueCounters,
    QueuePolicy,
)
from .transport import Connection, TransportConfig, TransportStats, connect

log = logging.getLogger(__name__)

PAYLOAD_HEADER = struct.Struct(">QQ")
MIN_PAYLOAD = PAYLOAD_HEADER.size
PUBLISH_LOG_HEADER = ["seq", "gen_ns", "send_ns", "ack_ns", "outcome"]

Clock = Callable[[], int]
now_ns: Clock = time.monotonic_ns


class ProtocolError(ConnectionError):
    """The peer answered with something the MQTT exchange does not allow."""


def packet_id_for(seq: int) -> int:
    return seq % 65535 + 1


def encode_payload(gen_ns: int, seq: int, size: int = MIN_PAYLOAD) -> bytes:
    if size < MIN_PAYLOAD:
        raise ValueError(f"payload_size must be >= {MIN_PAYLOAD}")
    return PAYLOAD_HEADER.pack(gen_ns, seq) + bytes(size - MIN_PAYLOAD)


def decode_payload(payload: bytes):
    """Return ``(gen_ns, seq)``; raises ``ValueError`` on short payloads."""
    if len(payload) < MIN_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes is shorter than {MIN_PAYLOAD}")
    return PAYLOAD_HEADER.unpack_from(payload)


def message_count(rate: float, window: float) -> int:
    """``ceil(rate * window)`` evaluated on the decimal values given."""
    return math.ceil(Fraction(str(rate)) * Fraction(str(window)))


class PacketChannel:
    """Reads whole MQTT packets from a connection."""

    def __init__(self, conn: Connection):
        self.conn = conn
        self.reader = PacketReader()
        self._ready: Deque[MqttPacket] = collections.deque()

    async def next(self) -> MqttPacket:
        while not self._ready:
            data = await self.conn.recv()
            if not data:
                raise ConnectionResetError("peer closed the connection")
            self._ready.extend(self.reader.feed(data))
        return self._ready.popleft()

    def take_ready(self) -> List[MqttPacket]:
        """Packets already decoded but not yet returned by :meth:`next`."""
        out = list(self._ready)
        self._ready.clear()
        return out

    async def expect(self, kind, timeout: float):
        pkt = await asyncio.wait_for(self.next(), timeout)
        if not isinstance(pkt, kind):
            raise ProtocolError(f"expected {kind.__name__}, got {type(pkt).__name__}")
        return pkt


async def mqtt_connect(conn: Connection, client_id: str, timeout: float) -> PacketChannel:
    """CONNECT / CONNACK exchange on an open transport connection."""
    chan = PacketChannel(conn)
    await conn.send(encode_packet(Connect(client_id)))
    ack = await chan.expect(ConnAck, timeout)
    if ack.return_code != 0:
        raise ProtocolError(f"broker refused connection with code {ack.return_code}")
    return chan


@dataclass
class RequestTiming:
    connect_ms: float
    publish_ms: float
    total_ms: float


@dataclass
class SimpleConfig:
    transport: TransportConfig
    topic: str = "aoi/test"
    qos: int = 1
    payload_size: int = MIN_PAYLOAD
    client_id: str = "aoi-simple"
    timeout_s: float = 10.0


async def simple_publish(cfg: SimpleConfig, clock: Clock = now_ns) -> RequestTiming:
    """connect, CONNACK, one publish (and PUBACK for qos 1), disconnect."""
    t0 = clock()
    conn = await connect(cfg.transport)
    try:
        chan = await mqtt_connect(conn, cfg.client_id, cfg.timeout_s)
        t1 = clock()
        pkt = Publish(cfg.topic, encode_payload(clock(), 0, cfg.payload_size), qos=cfg.qos,
                      packet_id=1 if cfg.qos else None)
        await conn.send(encode_packet(pkt))
        if cfg.qos:
            ack = await chan.expect(PubAck, cfg.timeout_s)
            if ack.packet_id != 1:
                raise ProtocolError(f"PUBACK for packet id {ack.packet_id}, expected 1")
        t2 = clock()
        await conn.send(encode_packet(Disconnect()))
    finally:
        await conn.close()
    t3 = clock()
    return RequestTiming((t1 - t0) / 1e6, (t2 - t1) / 1e6, (t3 - t0) / 1e6)


@dataclass
class StreamConfig:
    transport: TransportConfig
    nominal_rate: float
    window: float
    topic: str = "aoi/test"
    qos: int = 1
    payload_size: int = MIN_PAYLOAD
    queue: QueuePolicy = field(default_factory=lambda: FifoBounded(16))
    client_id: str = "aoi-stream"
    watchdog_s: Optional[float] = None

    def __post_init__(self) -> None:
        if self.nominal_rate <= 0 or self.window <= 0:
            raise ValueError("nominal_rate and window must be positive")
        if self.qos not in (0, 1):
            raise ValueError("qos must be 0 or 1")
        if self.payload_size < MIN_PAYLOAD:
            raise ValueError(f"payload_size must be >= {MIN_PAYLOAD}")
        if isinstance(self.queue, str):
            self.queue = QueuePolicy.parse(self.queue)

    @property
    def total_messages(self) -> int:
        return message_count(self.nominal_rate, self.window)

    @property
    def period_ns(self) -> int:
        return round(1e9 / self.nominal_rate)

    @property
    def watchdog(self) -> float:
        return self.watchdog_s if self.watchdog_s is not None else max(5 * self.window, 10.0)


@dataclass
class PublishRecord:
    seq: int
    gen_ns: int
    outcome: Optional[PushOutcome] = None
    send_ns: Optional[int] = None
    ack_ns: Optional[int] = None

    @property
    def packet_id(self) -> int:
        return packet_id_for(self.seq)


@dataclass
class StreamResult:
    config: StreamConfig
    records: List[PublishRecord]
    queue: QueueCounters
    transport: TransportStats
    started_ns: int
    finished_ns: int
    failed: bool = False
    error: Optional[str] = None
    unmatched_acks: int = 0

    @property
    def generated(self) -> int:
        return len(self.records)

    @property
    def sent(self) -> int:
        return sum(1 for r in self.records if r.send_ns is not None)

    @property
    def acked(self) -> int:
        return sum(1 for r in self.records if r.ack_ns is not None)

    @property
    def dropped(self) -> int:
        return self.queue.dropped

    @property
    def producer_block_ms(self) -> float:
        return self.queue.producer_block_ms

    def _rate(self, stamps: List[int]) -> Optional[float]:
        if len(stamps) < 2 or stamps[-1] == stamps[0]:
            return None
        return (len(stamps) - 1) * 1e9 / (stamps[-1] - stamps[0])

    @property
    def generation_rate(self) -> Optional[float]:
        return self._rate([r.gen_ns for r in self.records])

    @property
    def send_rate(self) -> Optional[float]:
        return self._rate(sorted(r.send_ns for r in self.records if r.send_ns is not None))

    @property
    def writes_per_message(self) -> Optional[float]:
        """Transport data units per message sent."""
        return self.transport.segments / self.sent if self.sent else None


def publish_log_rows(records: List[PublishRecord]):
    for r in records:
        yield [r.seq, r.gen_ns, "" if r.send_ns is None else r.send_ns,
               "" if r.ack_ns is None else r.ack_ns, r.outcome.value if r.outcome else ""]


def write_publish_log(path, records: List[PublishRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PUBLISH_LOG_HEADER)
        w.writerows(publish_log_rows(records))


def publish_log_string(records: List[PublishRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PUBLISH_LOG_HEADER)
    w.writerows(publish_log_rows(records))
    return buf.getvalue()


def read_publish_log(path) -> List[PublishRecord]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PUBLISH_LOG_HEADER:
            raise ValueError(f"unexpected publish log header {reader.fieldnames!r}")
        for row in reader:
            out.append(PublishRecord(
                int(row["seq"]), int(row["gen_ns"]),
                PushOutcome(row["outcome"]) if row["outcome"] else None,
                int(row["send_ns"]) if row["send_ns"] else None,
                int(row["ack_ns"]) if row["ack_ns"] else None))
    return out


class _StreamRun:
    def __init__(self, cfg: StreamConfig, conn: Connection, chan: PacketChannel, clock: Clock):
        self.cfg = cfg
        self.conn = conn
        self.chan = chan
        self.clock = clock
        self.queue = MessageQueue(cfg.queue)
        self.records: List[PublishRecord] = []
        self.inflight: Deque[PublishRecord] = collections.deque()
        self.acks: asyncio.Queue = asyncio.Queue()
        self.sender_done = False
        self.all_acked = asyncio.Event()
        self.unmatched = 0

    async def producer(self) -> None:
        cfg, clock = self.cfg, self.clock
        period = cfg.period_ns
        start = clock()
        for k in range(cfg.total_messages):
            deadline = start + k * period
            delay = deadline - clock()
            if delay > 0:
                await asyncio.sleep(delay / 1e9)
            rec = PublishRecord(k, clock())
            self.records.append(rec)
            rec.outcome = await self.queue.push(rec)
        self.queue.close()

    async def sender(self) -> None:
        cfg, clock, conn = self.cfg, self.clock, self.conn
        while True:
            try:
                rec = await self.queue.pop()
            except EndOfQueue:
                break
            payload = encode_payload(rec.gen_ns, rec.seq, cfg.payload_size)
            pkt = Publish(cfg.topic, payload, qos=cfg.qos,
                          packet_id=rec.packet_id if cfg.qos else None)
            data = encode_packet(pkt)
            if cfg.qos:
                self.inflight.append(rec)
            rec.send_ns = clock()
            await conn.send(data)
        self.sender_done = True
        self._check_done()

    async def ack_receiver(self) -> None:
        chan, clock = self.chan, self.clock
        while True:
            pkt = await chan.next()
            self.acks.put_nowait((pkt, clock()))

    async def ack_manager(self) -> None:
        while True:
            pkt, t = await self.acks.get()
            if not isinstance(pkt, PubAck):
                log.warning("ignoring %s from broker", type(pkt).__name__)
                continue
            rec = self._match(pkt.packet_id)
            if rec is None:
                self.unmatched += 1
                continue
            rec.ack_ns = t
            self._check_done()

    def _match(self, packet_id: int) -> Optional[PublishRecord]:
        inflight = self.inflight
        if inflight and inflight[0].packet_id == packet_id:
            return inflight.popleft()
        for i, rec in enumerate(inflight):
            if rec.packet_id == packet_id:
                del inflight[i]
                return rec
        return None

    def _check_done(self) -> None:
        if self.sender_done and not self.inflight:
            self.all_acked.set()

    async def run(self) -> None:
        background = [asyncio.create_task(self.ack_receiver()),
                      asyncio.create_task(self.ack_manager())] if self.cfg.qos else []
        main = [asyncio.create_task(self.producer()), asyncio.create_task(self.sender())]
        waiters = list(main)
        if self.cfg.qos:
            waiters.append(asyncio.create_task(self.all_acked.wait()))
        try:
            pending = set(waiters)
            watch = set(waiters) | set(background)
            while pending:
                done, _ = await asyncio.wait(watch, return_when=asyncio.FIRST_COMPLETED)
                for t in done:
                    if t.exception() is not None:
                        raise t.exception()
                    if t in background:
                        raise ConnectionResetError("ack receiver stopped")
                watch -= done
                pending -= done
        finally:
            for t in main + background + waiters:
                t.cancel()
            await asyncio.gather(*main, *background, *waiters, return_exceptions=True)


async def stream_run(cfg: StreamConfig, clock: Clock = now_ns) -> StreamResult:
    """Publish ``ceil(rate * window)`` messages through the configured queue.

    Failures (connection loss, watchdog expiry) do not raise: the result is
    marked failed and carries the partial log.
    """
    started = clock()
    conn: Optional[Connection] = None
    state: Optional[_StreamRun] = None
    error: Optional[str] = None
    timeout = cfg.transport.connect_timeout_ms / 1000
    try:
        conn = await connect(cfg.transport)
        chan = await mqtt_connect(conn, cfg.client_id, timeout)
        state = _StreamRun(cfg, conn, chan, clock)
        await asyncio.wait_for(state.run(), cfg.watchdog)
        await conn.send(encode_packet(Disconnect()))
    except asyncio.TimeoutError:
        error = f"watchdog expired after {cfg.watchdog:.1f} s"
    except (ConnectionError, OSError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    finally:
        stats = TransportStats()
        if conn is not None:
            try:
                stats = conn.stats
            except OSError:
                pass
            await conn.close()
    return StreamResult(
        config=cfg,
        records=state.records if state else [],
        queue=state.queue.counters if state else QueueCounters(),
        transport=stats,
        started_ns=started,
        finished_ns=clock(),
        failed=error is not None,
        error=error,
        unmatched_acks=state.unmatched if state else 0,
    )
