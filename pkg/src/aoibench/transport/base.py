"""Connection configuration and the common connection surface."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

DEFAULT_SEND_BUFFER_LIMIT = 64 * 1024


class TransportKind(str, enum.Enum):
    PLAIN = "tcp"
    SECURE = "tls"
    QUIC = "quic"

    @property
    def is_stream(self) -> bool:
        return self is not TransportKind.QUIC


class TrustPolicy(str, enum.Enum):
    VERIFY = "verify"  # system trust store + hostname check
    TRUST_ROOT = "trust-root"  # only the given CA file
    INSECURE = "insecure"  # skip verification (lab use only)


class TransportError(ConnectionError):
    """Base for transport failures surfaced to callers."""


class ConnectionClosedError(TransportError):
    """Operation on a connection that was already closed locally."""


class HandshakeError(TransportError):
    """TLS/QUIC handshake failed, including certificate rejection."""


@dataclass
class TransportConfig:
    """Client side of a connection.

    ``nagle_enabled`` applies to stream kinds only and ``segmentation_offload``
    to QUIC only; leaving them ``None`` selects the per-kind default (Nagle on,
    offload off).  Setting either on the wrong kind is rejected.

    ``send_buffer_limit`` bounds bytes the transport accepts beyond what it has
    put on the wire (TCP: ``TCP_NOTSENT_LOWAT``; QUIC: unacknowledged stream
    bytes) so that an overloaded link pushes back on the application queue
    instead of filling kernel or library buffers.
    """

    kind: TransportKind
    host: str
    port: int
    nagle_enabled: Optional[bool] = None
    segmentation_offload: Optional[bool] = None
    connect_timeout_ms: int = 10_000
    tls_trust: TrustPolicy = TrustPolicy.VERIFY
    ca_file: Optional[Path] = None
    server_name: Optional[str] = None
    send_buffer_limit: Optional[int] = DEFAULT_SEND_BUFFER_LIMIT

    def __post_init__(self) -> None:
        self.kind = TransportKind(self.kind)
        self.tls_trust = TrustPolicy(self.tls_trust)
        if self.kind is TransportKind.QUIC:
            if self.nagle_enabled is not None:
                raise ValueError("nagle_enabled applies to stream transports only")
            self.segmentation_offload = bool(self.segmentation_offload)
        else:
            if self.segmentation_offload is not None:
                raise ValueError("segmentation_offload applies to QUIC only")
            self.nagle_enabled = True if self.nagle_enabled is None else bool(self.nagle_enabled)
        if self.tls_trust is TrustPolicy.TRUST_ROOT and self.ca_file is None:
            raise ValueError("tls_trust=trust-root needs ca_file")
        if self.connect_timeout_ms <= 0:
            raise ValueError("connect_timeout_ms must be positive")

    @property
    def endpoint(self) -> Tuple[str, int]:
        return self.host, self.port


@dataclass
class ListenConfig:
    """Server side of a transport.  Certificate and key are required for TLS/QUIC."""

    kind: TransportKind
    host: str = "127.0.0.1"
    port: int = 0
    cert: Optional[Path] = None
    key: Optional[Path] = None
    nagle_enabled: bool = False

    def __post_init__(self) -> None:
        self.kind = TransportKind(self.kind)
        if self.kind is not TransportKind.PLAIN and (self.cert is None or self.key is None):
            raise ValueError(f"{self.kind.value} listener needs cert and key")


@dataclass
class TransportStats:
    """Counters kept by every connection.

    ``writes`` and ``bytes_sent`` count application send calls and bytes.
    ``segments`` counts transport units carrying application data: TCP data
    segments (from ``TCP_INFO``) or QUIC packets with stream frames.
    ``wire_bytes`` adds network/transport headers to the payload bytes.
    """

    writes: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    segments: int = 0
    wire_bytes: int = 0
    datagrams: int = 0
    max_datagram: int = 0
    gso_batches: int = 0
    gso_fallbacks: int = 0
    rtt_us: Optional[int] = None
    extra: dict = field(default_factory=dict)


Address = Union[Tuple[str, int], Tuple[str, int, int, int], None]


class Connection:
    """Ordered, reliable, full-duplex byte channel.

    One task may send while another receives.  ``recv`` returns ``b""`` at
    end of stream.  After :meth:`close`, :meth:`send` and :meth:`recv` raise
    :class:`ConnectionClosedError`.
    """

    kind: TransportKind
    local_address: Address = None
    remote_address: Address = None

    def __init__(self) -> None:
        self._closed = False

    @property
    def closed(self) -> bool:
        return self._closed

    def _check_open(self) -> None:
        if self._closed:
            raise ConnectionClosedError("connection is closed")

    async def send(self, data: bytes) -> None:
        raise NotImplementedError

    async def recv(self, max_bytes: int = 65536) -> bytes:
        raise NotImplementedError

    async def close(self) -> None:
        raise NotImplementedError

    @property
    def stats(self) -> TransportStats:
        raise NotImplementedError

    async def __aenter__(self):
        return self

    async def __aexit__(self, *exc):
        await self.close()
