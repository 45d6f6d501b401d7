"""QUIC v1 connections (aioquic) carrying MQTT on one bidirectional stream."""

from __future__ import annotations

import asyncio
import logging
import socket
import ssl
import struct
from typing import Callable, List, Optional, Tuple

from aioquic.asyncio.protocol import QuicConnectionProtocol
from aioquic.asyncio.server import QuicServer
from aioquic.quic.configuration import QuicConfiguration
from aioquic.quic.connection import QuicConnection
from aioquic.quic.packet_builder import QuicSentPacket
from aioquic.quic.stream import QuicStreamSender
from aioquic.tls import Epoch

from .base import (
    Connection,
    HandshakeError,
    ListenConfig,
    TransportConfig,
    TransportKind,
    TransportStats,
    TrustPolicy,
)

log = logging.getLogger(__name__)

ALPN = ["mqtt"]
UDP_SEGMENT = getattr(socket, "UDP_SEGMENT", 103)
SOL_UDP = getattr(socket, "SOL_UDP", 17)
_GSO_MAX_SEGMENTS = 64
_UDP_IP_HEADER = 28


def _carries_stream_data(packet: QuicSentPacket) -> bool:
    for handler, _ in packet.delivery_handlers:
        if isinstance(getattr(handler, "__self__", None), QuicStreamSender):
            return True
    return False


class _Protocol(QuicConnectionProtocol):
    """Counts what goes on the wire and optionally batches it with UDP GSO.

    With offload enabled, runs of equal-size datagrams go out in a single
    ``sendmsg`` carrying ``UDP_SEGMENT``.  If the kernel refuses, the batch is
    resent datagram by datagram and offload stays off for the connection.
    """

    def __init__(self, quic: QuicConnection, stream_handler=None, *,
                 gso: bool = False, on_stream: Optional[Callable] = None):
        super().__init__(quic, stream_handler=stream_handler)
        if on_stream is not None:
            self._stream_handler = lambda r, w: on_stream(self, r, w)
        self.stats = TransportStats()
        self.gso = gso
        self.raw_socket: Optional[socket.socket] = None
        self.progress = asyncio.Event()
        loss = quic._loss
        original = loss.on_packet_sent

        def on_packet_sent(*, packet: QuicSentPacket, space) -> None:
            if packet.epoch == Epoch.ONE_RTT and _carries_stream_data(packet):
                self.stats.segments += 1
            original(packet=packet, space=space)

        loss.on_packet_sent = on_packet_sent

    def connection_made(self, transport) -> None:
        super().connection_made(transport)
        if self.raw_socket is None:
            sock = transport.get_extra_info("socket")
            self.raw_socket = getattr(sock, "_sock", None)

    def _count(self, size: int) -> None:
        st = self.stats
        st.datagrams += 1
        st.wire_bytes += size + _UDP_IP_HEADER
        if size > st.max_datagram:
            st.max_datagram = size

    def _send_batch(self, batch: List[Tuple[bytes, tuple]]) -> None:
        if self.gso and len(batch) > 1 and self.raw_socket is not None:
            seg = len(batch[0][0])
            try:
                self.raw_socket.sendmsg([b"".join(d for d, _ in batch)],
                                        [(SOL_UDP, UDP_SEGMENT, struct.pack("=H", seg))],
                                        0, batch[0][1])
            except BlockingIOError:
                pass
            except OSError as exc:
                log.info("UDP segmentation offload rejected (%s); sending unbatched", exc)
                self.stats.gso_fallbacks += 1
                self.gso = False
            else:
                self.stats.gso_batches += 1
                for d, _ in batch:
                    self._count(len(d))
                return
        for d, addr in batch:
            self._transport.sendto(d, addr)
            self._count(len(d))

    def transmit(self) -> None:
        self._transmit_task = None
        datagrams = self._quic.datagrams_to_send(now=self._loop.time())
        i = 0
        while i < len(datagrams):
            size, addr = len(datagrams[i][0]), datagrams[i][1]
            j = i + 1
            if self.gso:
                while (j < len(datagrams) and j - i < _GSO_MAX_SEGMENTS
                       and datagrams[j][1] == addr and len(datagrams[j][0]) == size):
                    j += 1
                # a single shorter datagram may close a GSO batch
                if (j < len(datagrams) and j - i < _GSO_MAX_SEGMENTS
                        and datagrams[j][1] == addr and len(datagrams[j][0]) < size):
                    j += 1
            self._send_batch(datagrams[i:j])
            i = j

        timer_at = self._quic.get_timer()
        if self._timer is not None and self._timer_at != timer_at:
            self._timer.cancel()
            self._timer = None
        if self._timer is None and timer_at is not None:
            self._timer = self._loop.call_at(timer_at, self._handle_timer)
        self._timer_at = timer_at
        self.progress.set()

    def datagram_received(self, data, addr) -> None:
        super().datagram_received(data, addr)
        self.progress.set()

    def unacked_stream_bytes(self, stream_id: int) -> int:
        stream = self._quic._streams.get(stream_id)
        if stream is None:
            return 0
        sender = stream.sender
        return sender._buffer_stop - sender._buffer_start

    @property
    def is_closed(self) -> bool:
        return self._closed.is_set()


class QuicStreamConnection(Connection):
    kind = TransportKind.QUIC

    def __init__(self, protocol: _Protocol, reader: asyncio.StreamReader,
                 writer: asyncio.StreamWriter, transport=None,
                 send_buffer_limit: Optional[int] = None):
        super().__init__()
        self._protocol = protocol
        self._reader = reader
        self._writer = writer
        self._transport = transport
        self._limit = send_buffer_limit
        self._stream_id = writer.get_extra_info("stream_id")
        self._writes = 0
        self._bytes_sent = 0
        self._bytes_received = 0
        self._eof = False
        udp = protocol._transport
        self.local_address = udp.get_extra_info("sockname") if udp else None
        self.remote_address = protocol._quic._network_paths[0].addr if protocol._quic._network_paths else None

    @property
    def segmentation_offload(self) -> bool:
        return self._protocol.gso

    async def _wait_for_room(self) -> None:
        proto = self._protocol
        while proto.unacked_stream_bytes(self._stream_id) > self._limit:
            if proto.is_closed:
                raise ConnectionResetError("QUIC connection terminated")
            proto.progress.clear()
            await proto.progress.wait()

    async def send(self, data: bytes) -> None:
        self._check_open()
        if self._protocol.is_closed:
            raise ConnectionResetError("QUIC connection terminated")
        self._writer.write(data)
        self._writes += 1
        self._bytes_sent += len(data)
        if self._limit is not None:
            await self._wait_for_room()

    async def recv(self, max_bytes: int = 65536) -> bytes:
        self._check_open()
        if self._eof:
            return b""
        data = await self._reader.read(max_bytes)
        if not data:
            self._eof = True
        self._bytes_received += len(data)
        return data

    @property
    def stats(self) -> TransportStats:
        p = self._protocol.stats
        return TransportStats(
            writes=self._writes, bytes_sent=self._bytes_sent, bytes_received=self._bytes_received,
            segments=p.segments, wire_bytes=p.wire_bytes, datagrams=p.datagrams,
            max_datagram=p.max_datagram, gso_batches=p.gso_batches, gso_fallbacks=p.gso_fallbacks,
            rtt_us=int(self._protocol._quic._loss._rtt_smoothed * 1e6) or None,
        )

    async def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        proto = self._protocol
        try:
            if not proto.is_closed:
                self._writer.write_eof()
                proto.transmit()
                deadline = asyncio.get_running_loop().time() + 5
                while proto.unacked_stream_bytes(self._stream_id) > 0 and not proto.is_closed:
                    remaining = deadline - asyncio.get_running_loop().time()
                    if remaining <= 0:
                        break
                    proto.progress.clear()
                    try:
                        await asyncio.wait_for(proto.progress.wait(), remaining)
                    except asyncio.TimeoutError:
                        break
            proto.close()
            await asyncio.wait_for(proto.wait_closed(), 2)
        except (asyncio.TimeoutError, ConnectionError):
            pass
        finally:
            if self._transport is not None:
                self._transport.close()


def _client_configuration(cfg: TransportConfig) -> QuicConfiguration:
    conf = QuicConfiguration(is_client=True, alpn_protocols=ALPN,
                             server_name=cfg.server_name or cfg.host, idle_timeout=60.0)
    if cfg.tls_trust is TrustPolicy.INSECURE:
        conf.verify_mode = ssl.CERT_NONE
    elif cfg.tls_trust is TrustPolicy.TRUST_ROOT:
        conf.load_verify_locations(cafile=str(cfg.ca_file))
    return conf


async def connect_quic(cfg: TransportConfig) -> QuicStreamConnection:
    loop = asyncio.get_running_loop()
    timeout = cfg.connect_timeout_ms / 1000
    infos = await loop.getaddrinfo(cfg.host, cfg.port, type=socket.SOCK_DGRAM)
    family, addr = infos[0][0], infos[0][4]
    sock = socket.socket(family, socket.SOCK_DGRAM)
    sock.bind(("::" if family == socket.AF_INET6 else "0.0.0.0", 0))
    sock.setblocking(False)
    quic = QuicConnection(configuration=_client_configuration(cfg))
    transport, protocol = await loop.create_datagram_endpoint(
        lambda: _Protocol(quic, gso=cfg.segmentation_offload), sock=sock)
    protocol.raw_socket = sock
    try:
        protocol.connect(addr)
        await asyncio.wait_for(protocol.wait_connected(), timeout)
    except asyncio.TimeoutError as exc:
        transport.close()
        raise TimeoutError(f"QUIC handshake with {cfg.host}:{cfg.port} timed out") from exc
    except ConnectionError as exc:
        transport.close()
        reason = getattr(quic, "_close_event", None)
        raise HandshakeError(f"QUIC handshake failed: {getattr(reason, 'reason_phrase', exc)}") from exc
    reader, writer = await protocol.create_stream()
    return QuicStreamConnection(protocol, reader, writer, transport, cfg.send_buffer_limit)


class QuicListener:
    def __init__(self, server: QuicServer, transport):
        self._server = server
        self._transport = transport
        self.sockets = [transport.get_extra_info("socket")]

    def close(self) -> None:
        self._server.close()

    async def wait_closed(self) -> None:
        await asyncio.sleep(0)


async def serve_quic(cfg: ListenConfig, handler) -> QuicListener:
    loop = asyncio.get_running_loop()
    conf = QuicConfiguration(is_client=False, alpn_protocols=ALPN, idle_timeout=60.0)
    conf.load_cert_chain(str(cfg.cert), str(cfg.key))
    tasks = set()

    async def run(conn: QuicStreamConnection) -> None:
        try:
            await handler(conn)
        except ConnectionError as exc:
            log.debug("quic handler ended: %r", exc)
        finally:
            await conn.close()

    def on_stream(protocol: _Protocol, reader, writer) -> None:
        task = loop.create_task(run(QuicStreamConnection(protocol, reader, writer)))
        tasks.add(task)
        task.add_done_callback(tasks.discard)

    def create_protocol(quic, stream_handler=None):
        return _Protocol(quic, on_stream=on_stream)

    server = QuicServer(configuration=conf, create_protocol=create_protocol)
    transport, _ = await loop.create_datagram_endpoint(lambda: server, local_addr=(cfg.host, cfg.port))
    return QuicListener(server, transport)
