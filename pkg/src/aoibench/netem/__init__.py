"""Userspace impairment proxy: per-direction fixed delay and rate limit.

Modes:

* ``stream``: terminates TCP on both sides and relays byte chunks.
* ``datagram``: relays UDP datagrams (QUIC), keeping datagram boundaries.
* ``packet``: relays raw IPv4 packets through a TUN device so that the
  endpoints' own TCP/QUIC state machines see the impairment.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .datagram import DatagramProxy
from .packet import PacketProxy, packet_mode_available
from .shaper import DirectionStats, Shaper, TraceEntry
from .stream import StreamProxy

__all__ = [
    "DirectionStats", "ImpairmentConfig", "Proxy", "ProxyMode", "Shaper", "TraceEntry",
    "packet_mode_available", "parse_hostport", "run_proxy",
]

MIN_QUEUE_LIMIT = 64 * 1024
QUEUE_LIMIT_SECONDS = 0.1


class ProxyMode(str, enum.Enum):
    STREAM = "stream"
    DATAGRAM = "datagram"
    PACKET = "packet"


def parse_hostport(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host.strip("[]") or "127.0.0.1", int(port)


@dataclass
class ImpairmentConfig:
    """Both delay and rate apply to each direction independently.

    ``queue_limit_bytes`` caps data waiting on the rate limiter, by default
    ``max(64 KiB, 100 ms at the configured rate)``.  Packet and datagram modes
    drop beyond it; stream mode stops reading instead.  ``socket_buffer`` sets
    ``SO_RCVBUF`` on stream-mode sockets so kernel buffers stay small relative
    to the limiter.
    """

    listen: Tuple[str, int] = ("127.0.0.1", 0)
    upstream: Tuple[str, int] = ("127.0.0.1", 1883)
    one_way_delay_ms: float = 0.0
    rate_limit_bps: Optional[float] = None
    mode: ProxyMode = ProxyMode.STREAM
    burst_bytes: int = 1500
    queue_limit_bytes: Optional[int] = None
    idle_timeout_s: float = 60.0
    socket_buffer: Optional[int] = 64 * 1024
    trace: bool = False

    def __post_init__(self) -> None:
        self.mode = ProxyMode(self.mode)
        if self.one_way_delay_ms < 0:
            raise ValueError("one_way_delay_ms must be >= 0")
        if self.rate_limit_bps is not None and self.rate_limit_bps <= 0:
            raise ValueError("rate_limit_bps must be positive")
        self.listen = tuple(self.listen)
        self.upstream = tuple(self.upstream)

    @property
    def queue_limit(self) -> int:
        if self.queue_limit_bytes is not None:
            return self.queue_limit_bytes
        if self.rate_limit_bps is None:
            return MIN_QUEUE_LIMIT
        return max(MIN_QUEUE_LIMIT, int(self.rate_limit_bps / 8 * QUEUE_LIMIT_SECONDS))


class Proxy:
    """Running proxy.  ``address`` is where clients connect."""

    def __init__(self, cfg: ImpairmentConfig, impl):
        self.cfg = cfg
        self._impl = impl

    @property
    def address(self) -> Tuple[str, int]:
        return tuple(self._impl.address)

    @property
    def upstream_host(self) -> str:
        """Host the upstream must listen on (differs from ``cfg.upstream`` in packet mode)."""
        if self.cfg.mode is ProxyMode.PACKET:
            return self._impl.local_host
        return self.cfg.upstream[0]

    @property
    def shapers(self) -> List[Shaper]:
        return self._impl.shapers

    @property
    def dropped(self) -> int:
        return sum(s.stats.dropped for s in self.shapers)

    async def close(self) -> None:
        await self._impl.close()

    async def __aenter__(self):
        return self

    async def __aexit__(self, *exc):
        await self.close()


async def run_proxy(cfg: ImpairmentConfig) -> Proxy:
    """Start a proxy; in packet mode clients dial ``proxy.address`` and the
    upstream must listen on ``proxy.upstream_host`` at ``cfg.upstream`` port."""
    kwargs = dict(delay_s=cfg.one_way_delay_ms / 1000, rate_bps=cfg.rate_limit_bps,
                  burst_bytes=cfg.burst_bytes, trace=cfg.trace)
    if cfg.mode is ProxyMode.STREAM:
        impl = StreamProxy(cfg, kwargs)
    elif cfg.mode is ProxyMode.DATAGRAM:
        impl = DatagramProxy(cfg, dict(kwargs, limit_bytes=cfg.queue_limit))
    else:
        impl = PacketProxy(cfg, dict(kwargs, limit_bytes=cfg.queue_limit))
    await impl.start()
    return Proxy(cfg, impl)
