"""Subscriber that timestamps every received publish."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..aoi import TimestampLog
from ..client import Clock, ProtocolError, decode_payload, mqtt_connect, now_ns
from ..codec import SUBACK_FAILURE, Publish, SubAck, Subscribe, encode_packet
from ..transport import TransportConfig, connect


@dataclass
class SubscribeConfig:
    transport: TransportConfig
    topic: str = "aoi/test"
    client_id: str = "aoi-sub"
    idle_timeout_s: float = 10.0
    linger_s: float = 0.5  # quiet period after a stop request before returning


@dataclass
class Collected:
    records: List[Tuple[int, int, int]] = field(default_factory=list)
    rejected: int = 0
    ended_by: str = ""

    @property
    def log(self) -> TimestampLog:
        return TimestampLog.from_records(self.records)


async def subscribe_collect(cfg: SubscribeConfig, stop: Optional[asyncio.Event] = None,
                            ready: Optional[asyncio.Event] = None,
                            clock: Clock = now_ns) -> Collected:
    """Subscribe and record ``(seq, gen_ns, rx_ns)`` for each publish.

    ``rx_ns`` is read as soon as a chunk arrives, before decoding.  Returns
    after ``idle_timeout_s`` without traffic, or once ``stop`` is set and the
    connection has been quiet for ``linger_s``.
    """
    out = Collected()
    conn = await connect(cfg.transport)
    try:
        timeout = cfg.transport.connect_timeout_ms / 1000
        chan = await mqtt_connect(conn, cfg.client_id, timeout)
        await conn.send(encode_packet(Subscribe(1, cfg.topic, 0)))
        ack = await chan.expect(SubAck, timeout)
        if ack.granted_qos == SUBACK_FAILURE:
            raise ProtocolError(f"subscription to {cfg.topic!r} refused")
        if ready is not None:
            ready.set()
        stop = stop or asyncio.Event()
        for pkt in chan.take_ready():
            _record(out, pkt, clock())
        stopper = asyncio.ensure_future(stop.wait())
        recv = asyncio.ensure_future(conn.recv())
        waiting = {recv, stopper}
        try:
            while True:
                wait_s = cfg.linger_s if stop.is_set() else cfg.idle_timeout_s
                done, _ = await asyncio.wait(waiting, timeout=wait_s,
                                             return_when=asyncio.FIRST_COMPLETED)
                if not done:
                    out.ended_by = "stop" if stop.is_set() else "idle"
                    break
                waiting -= done
                if recv in done:
                    data = recv.result()
                    rx = clock()
                    if not data:
                        out.ended_by = "eof"
                        break
                    for pkt in chan.reader.feed(data):
                        _record(out, pkt, rx)
                    recv = asyncio.ensure_future(conn.recv())
                    waiting.add(recv)
        finally:
            for t in (recv, stopper):
                t.cancel()
            await asyncio.gather(recv, stopper, return_exceptions=True)
    finally:
        await conn.close()
    return out


def _record(out: Collected, pkt, rx: int) -> None:
    if not isinstance(pkt, Publish):
        return
    try:
        gen, seq = decode_payload(pkt.payload)
    except ValueError:
        out.rejected += 1
        return
    out.records.append((seq, gen, rx))
