"""Minimal MQTT relay: exact-topic forwarding, qos 0 downstream, acks upstream."""

from __future__ import annotations

import asyncio
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set

from .codec import (
    CodecError,
    ConnAck,
    Connect,
    Disconnect,
    PacketReader,
    PubAck,
    Publish,
    SubAck,
    Subscribe,
    encode_packet,
)
from .transport import Connection, ListenConfig, TransportKind, listener_port, serve

log = logging.getLogger(__name__)


@dataclass
class BrokerStats:
    connections: int = 0
    rejected: int = 0
    publishes: int = 0
    forwarded: int = 0
    forward_failures: int = 0


class _Session:
    """One client connection with its own outbound FIFO and writer task."""

    def __init__(self, conn: Connection, client_id: str):
        self.conn = conn
        self.client_id = client_id
        self.outbox: asyncio.Queue = asyncio.Queue()
        self.alive = True
        self.writer = asyncio.get_running_loop().create_task(self._write_loop())

    def enqueue(self, data: bytes) -> None:
        if self.alive:
            self.outbox.put_nowait(data)

    async def _write_loop(self) -> None:
        try:
            while True:
                chunks = [await self.outbox.get()]
                while not self.outbox.empty():
                    chunks.append(self.outbox.get_nowait())
                if chunks[-1] is None:
                    chunks.pop()
                    if chunks:
                        await self.conn.send(b"".join(chunks))
                    return
                await self.conn.send(b"".join(chunks))
        except (ConnectionError, OSError) as exc:
            log.debug("writer for %s failed: %r", self.client_id, exc)
            self.alive = False
            raise

    async def finish(self) -> None:
        """Flush queued bytes and stop the writer."""
        self.outbox.put_nowait(None)
        try:
            await asyncio.wait_for(self.writer, 5)
        except (asyncio.TimeoutError, ConnectionError, OSError, asyncio.CancelledError):
            self.writer.cancel()
        self.alive = False


class Broker:
    def __init__(self) -> None:
        self.stats = BrokerStats()
        self._topics: Dict[str, Set[_Session]] = defaultdict(set)
        self._servers: List = []
        self.ports: Dict[TransportKind, int] = {}
        self._handlers: Set[asyncio.Task] = set()

    async def start(self, listeners: Sequence[ListenConfig]) -> "Broker":
        for cfg in listeners:
            server = await serve(cfg, self._handle)
            self._servers.append(server)
            self.ports[cfg.kind] = listener_port(server)
        return self

    def subscribers(self, topic: str) -> int:
        return len(self._topics.get(topic, ()))

    def _forward(self, pkt: Publish) -> None:
        subs = self._topics.get(pkt.topic)
        if not subs:
            return
        data = encode_packet(Publish(pkt.topic, pkt.payload, qos=0))
        for s in list(subs):
            if s.alive:
                s.enqueue(data)
                self.stats.forwarded += 1
            else:
                subs.discard(s)
                self.stats.forward_failures += 1

    async def _handle(self, conn: Connection) -> None:
        task = asyncio.current_task()
        self._handlers.add(task)
        reader = PacketReader()
        session: Optional[_Session] = None
        topics: Set[str] = set()
        try:
            while True:
                data = await conn.recv()
                if not data:
                    return
                try:
                    packets = reader.feed(data)
                except CodecError as exc:
                    log.info("malformed packet from %s: %s", conn.remote_address, exc)
                    self.stats.rejected += 1
                    return
                for pkt in packets:
                    if session is None:
                        if not isinstance(pkt, Connect):
                            self.stats.rejected += 1
                            return
                        session = _Session(conn, pkt.client_id)
                        self.stats.connections += 1
                        session.enqueue(encode_packet(ConnAck(0)))
                    elif isinstance(pkt, Publish):
                        self.stats.publishes += 1
                        if pkt.qos == 1:
                            session.enqueue(encode_packet(PubAck(pkt.packet_id)))
                        self._forward(pkt)
                    elif isinstance(pkt, Subscribe):
                        # downstream delivery is always qos 0
                        self._topics[pkt.topic_filter].add(session)
                        topics.add(pkt.topic_filter)
                        session.enqueue(encode_packet(SubAck(pkt.packet_id, 0)))
                    elif isinstance(pkt, Disconnect):
                        return
                    else:
                        log.info("unexpected %s from %s", type(pkt).__name__, session.client_id)
                        return
                    if not session.alive:
                        return
        finally:
            for t in topics:
                self._topics[t].discard(session)
                if not self._topics[t]:
                    del self._topics[t]
            if session is not None:
                await session.finish()
            self._handlers.discard(task)

    async def close(self) -> None:
        for s in self._servers:
            s.close()
        for t in list(self._handlers):
            t.cancel()
        if self._handlers:
            await asyncio.gather(*self._handlers, return_exceptions=True)
        for s in self._servers:
            await s.wait_closed()
        self._servers.clear()

    async def __aenter__(self):
        return self

    async def __aexit__(self, *exc):
        await self.close()


async def serve_broker(listeners: Sequence[ListenConfig]) -> Broker:
    return await Broker().start(listeners)
