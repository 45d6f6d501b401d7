"""TCP and TLS-over-TCP connections on asyncio streams."""

from __future__ import annotations

import asyncio
import logging
import socket
import ssl
import struct
from typing import Awaitable, Callable, Optional

from .base import (
    Connection,
    ConnectionClosedError,
    HandshakeError,
    ListenConfig,
    TransportConfig,
    TransportKind,
    TransportStats,
    TrustPolicy,
)

log = logging.getLogger(__name__)

TCP_NOTSENT_LOWAT = getattr(socket, "TCP_NOTSENT_LOWAT", 25)
_TCP_INFO_LEN = 232
_HEADER_BYTES = 52  # IPv4 (20) + TCP (20) + timestamp option (12)


def client_ssl_context(cfg: TransportConfig) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_3
    ctx.maximum_version = ssl.TLSVersion.TLSv1_3
    if cfg.tls_trust is TrustPolicy.INSECURE:
        ctx.check_hostname = False
        ctx.verify_mode = ssl.CERT_NONE
    elif cfg.tls_trust is TrustPolicy.TRUST_ROOT:
        ctx.load_verify_locations(cafile=str(cfg.ca_file))
    else:
        ctx.load_default_certs()
    return ctx


def server_ssl_context(cfg: ListenConfig) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_3
    ctx.maximum_version = ssl.TLSVersion.TLSv1_3
    ctx.load_cert_chain(str(cfg.cert), str(cfg.key))
    return ctx


def read_tcp_info(sock) -> Optional[dict]:
    """Selected ``struct tcp_info`` fields (Linux), or ``None`` if unavailable."""
    try:
        raw = sock.getsockopt(socket.IPPROTO_TCP, socket.TCP_INFO, _TCP_INFO_LEN)
    except (OSError, AttributeError):
        return None
    if len(raw) < 160:
        return None
    info = {
        "rtt_us": struct.unpack_from("I", raw, 68)[0],
        "snd_cwnd": struct.unpack_from("I", raw, 80)[0],
        "snd_mss": struct.unpack_from("I", raw, 16)[0],
        "unacked": struct.unpack_from("I", raw, 24)[0],
        "total_retrans": struct.unpack_from("I", raw, 100)[0],
        "segs_out": struct.unpack_from("I", raw, 136)[0],
        "data_segs_out": struct.unpack_from("I", raw, 156)[0],
    }
    if len(raw) >= 208:
        info["bytes_sent"] = struct.unpack_from("Q", raw, 200)[0]
    return info


def _set_nagle(sock, enabled: bool) -> None:
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 0 if enabled else 1)


class StreamConnection(Connection):
    def __init__(self, kind: TransportKind, reader: asyncio.StreamReader,
                 writer: asyncio.StreamWriter):
        super().__init__()
        self.kind = kind
        self._reader = reader
        self._writer = writer
        self._sock = writer.get_extra_info("socket")
        self.local_address = writer.get_extra_info("sockname")
        self.remote_address = writer.get_extra_info("peername")
        self._stats = TransportStats()
        self._eof = False
        # handshake traffic is excluded from the data counters
        self._base = read_tcp_info(self._sock) if self._sock is not None else None

    def configure(self, nagle_enabled: bool, send_buffer_limit: Optional[int]) -> None:
        _set_nagle(self._sock, nagle_enabled)
        if send_buffer_limit is not None:
            try:
                self._sock.setsockopt(socket.IPPROTO_TCP, TCP_NOTSENT_LOWAT, send_buffer_limit)
            except OSError:  # pragma: no cover - non-Linux
                log.debug("TCP_NOTSENT_LOWAT not supported")
            self._writer.transport.set_write_buffer_limits(high=0)

    @property
    def nagle_enabled(self) -> bool:
        return not self._sock.getsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY)

    async def send(self, data: bytes) -> None:
        self._check_open()
        self._writer.write(data)
        self._stats.writes += 1
        self._stats.bytes_sent += len(data)
        await self._writer.drain()

    async def recv(self, max_bytes: int = 65536) -> bytes:
        self._check_open()
        if self._eof:
            return b""
        data = await self._reader.read(max_bytes)
        if not data:
            self._eof = True
        self._stats.bytes_received += len(data)
        return data

    def _refresh(self) -> None:
        info = read_tcp_info(self._sock) if self._sock is not None else None
        if info is None:
            return
        base = self._base or {}
        segs = info["data_segs_out"] - base.get("data_segs_out", 0)
        self._stats.segments = segs
        self._stats.rtt_us = info["rtt_us"]
        payload = info.get("bytes_sent", self._stats.bytes_sent) - base.get("bytes_sent", 0)
        self._stats.wire_bytes = payload + _HEADER_BYTES * segs
        self._stats.extra = info

    @property
    def stats(self) -> TransportStats:
        if not self._closed:
            self._refresh()
        return self._stats

    async def close(self) -> None:
        if self._closed:
            return
        try:
            self._refresh()
        except OSError:
            pass
        self._closed = True
        writer = self._writer
        try:
            if not writer.is_closing():
                await asyncio.wait_for(writer.drain(), timeout=5)
            writer.close()
            await asyncio.wait_for(writer.wait_closed(), timeout=5)
        except (OSError, ssl.SSLError, asyncio.TimeoutError, ConnectionClosedError):
            writer.transport.abort()


async def connect_stream(cfg: TransportConfig) -> StreamConnection:
    timeout = cfg.connect_timeout_ms / 1000
    ctx = client_ssl_context(cfg) if cfg.kind is TransportKind.SECURE else None
    kwargs = {}
    if ctx is not None:
        kwargs = {"ssl": ctx, "server_hostname": cfg.server_name or cfg.host,
                  "ssl_handshake_timeout": timeout}
    try:
        reader, writer = await asyncio.wait_for(
            asyncio.open_connection(cfg.host, cfg.port, **kwargs), timeout)
    except asyncio.TimeoutError as exc:
        raise TimeoutError(f"connect to {cfg.host}:{cfg.port} timed out") from exc
    except ssl.SSLError as exc:
        raise HandshakeError(str(exc)) from exc
    conn = StreamConnection(cfg.kind, reader, writer)
    conn.configure(cfg.nagle_enabled, cfg.send_buffer_limit)
    return conn


Handler = Callable[[Connection], Awaitable[None]]


async def serve_stream(cfg: ListenConfig, handler: Handler) -> asyncio.AbstractServer:
    ctx = server_ssl_context(cfg) if cfg.kind is TransportKind.SECURE else None

    async def on_client(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = StreamConnection(cfg.kind, reader, writer)
        conn.configure(cfg.nagle_enabled, None)
        try:
            await handler(conn)
        except (ConnectionError, ssl.SSLError, ConnectionClosedError) as exc:
            log.debug("stream handler ended: %r", exc)
        finally:
            await conn.close()

    return await asyncio.start_server(on_client, cfg.host, cfg.port, ssl=ctx,
                                      reuse_address=True)
