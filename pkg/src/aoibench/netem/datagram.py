"""Datagram-mode proxy: relays UDP datagrams, one upstream socket per client."""

from __future__ import annotations

import asyncio
import logging
import socket
from typing import Dict, List, Optional, Tuple

from .shaper import Shaper

log = logging.getLogger(__name__)


class _Session:
    def __init__(self, proxy: "DatagramProxy", client: Tuple, family: int, upstream: Tuple):
        self.client = client
        self.loop = asyncio.get_running_loop()
        self.sock = socket.socket(family, socket.SOCK_DGRAM)
        self.sock.setblocking(False)
        self.sock.connect(upstream)
        self.last_seen = self.loop.time()
        self.up = Shaper(self._send_up, **proxy._shaper_kwargs)
        self.down = Shaper(lambda d: proxy._send_down(d, client), **proxy._shaper_kwargs)
        self.loop.add_reader(self.sock.fileno(), self._readable)

    def _send_up(self, data: bytes) -> None:
        try:
            self.sock.send(data)
        except (BlockingIOError, ConnectionRefusedError):
            self.up.stats.dropped += 1

    def _readable(self) -> None:
        while True:
            try:
                data = self.sock.recv(65535)
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                return
            self.last_seen = self.loop.time()
            self.down.offer(data, len(data))

    def close(self) -> None:
        self.loop.remove_reader(self.sock.fileno())
        self.sock.close()
        self.up.close()
        self.down.close()


class _Listener(asyncio.DatagramProtocol):
    def __init__(self, proxy: "DatagramProxy"):
        self.proxy = proxy

    def datagram_received(self, data: bytes, addr) -> None:
        self.proxy._from_client(data, addr)


class DatagramProxy:
    def __init__(self, cfg, shaper_kwargs):
        self.cfg = cfg
        self._shaper_kwargs = shaper_kwargs
        self.sessions: Dict[Tuple, _Session] = {}
        self.evicted = 0
        self._transport: Optional[asyncio.DatagramTransport] = None
        self._upstream: Optional[Tuple] = None
        self._family = socket.AF_INET
        self._reaper: Optional[asyncio.Task] = None
        self.shapers: List[Shaper] = []

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        host, port = self.cfg.upstream
        info = (await loop.getaddrinfo(host, port, type=socket.SOCK_DGRAM))[0]
        self._family, self._upstream = info[0], info[4]
        self._transport, _ = await loop.create_datagram_endpoint(
            lambda: _Listener(self), local_addr=tuple(self.cfg.listen))
        self._reaper = loop.create_task(self._reap())

    @property
    def address(self):
        return self._transport.get_extra_info("sockname")[:2]

    def _from_client(self, data: bytes, addr) -> None:
        s = self.sessions.get(addr)
        if s is None:
            s = _Session(self, addr, self._family, self._upstream)
            self.sessions[addr] = s
            self.shapers += [s.up, s.down]
        s.last_seen = s.loop.time()
        s.up.offer(data, len(data))

    def _send_down(self, data: bytes, addr) -> None:
        if self._transport is not None and not self._transport.is_closing():
            self._transport.sendto(data, addr)

    async def _reap(self) -> None:
        idle = self.cfg.idle_timeout_s
        loop = asyncio.get_running_loop()
        while True:
            await asyncio.sleep(min(idle / 4, 5.0))
            now = loop.time()
            for addr, s in list(self.sessions.items()):
                if now - s.last_seen > idle and not s.up.pending_units and not s.down.pending_units:
                    s.close()
                    del self.sessions[addr]
                    self.evicted += 1

    async def close(self) -> None:
        if self._reaper is not None:
            self._reaper.cancel()
        for s in self.sessions.values():
            s.close()
        self.sessions.clear()
        if self._transport is not None:
            self._transport.close()
