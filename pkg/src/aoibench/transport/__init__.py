"""Pluggable reliable transports: plain TCP, TLS 1.3 over TCP, and QUIC."""

from __future__ import annotations

from .base import (
    DEFAULT_SEND_BUFFER_LIMIT,
    Connection,
    ConnectionClosedError,
    HandshakeError,
    ListenConfig,
    TransportConfig,
    TransportError,
    TransportKind,
    TransportStats,
    TrustPolicy,
)
from .certs import LabCertificates, generate_lab_certificates
from .quic import connect_quic, serve_quic
from .stream import connect_stream, serve_stream

__all__ = [
    "DEFAULT_SEND_BUFFER_LIMIT", "Connection", "ConnectionClosedError", "HandshakeError",
    "LabCertificates", "ListenConfig", "TransportConfig", "TransportError", "TransportKind",
    "TransportStats", "TrustPolicy", "connect", "generate_lab_certificates", "listener_port",
    "serve",
]


async def connect(cfg: TransportConfig) -> Connection:
    if cfg.kind is TransportKind.QUIC:
        return await connect_quic(cfg)
    return await connect_stream(cfg)


async def serve(cfg: ListenConfig, handler):
    """Start a listener; ``handler(conn)`` runs per accepted connection and the
    connection is closed when it returns.  Returns an object with ``close()``,
    ``wait_closed()`` and ``sockets``."""
    if cfg.kind is TransportKind.QUIC:
        return await serve_quic(cfg, handler)
    return await serve_stream(cfg, handler)


def listener_port(server) -> int:
    return server.sockets[0].getsockname()[1]
