"""Stream-mode proxy: relays TCP byte chunks through two shapers."""

from __future__ import annotations

import asyncio
import logging
import socket
from typing import List, Optional

from .shaper import Shaper

log = logging.getLogger(__name__)

CHUNK = 16 * 1024
_EOF = object()


def _socket_for(family: int, rcvbuf: Optional[int]) -> socket.socket:
    sock = socket.socket(family, socket.SOCK_STREAM)
    if rcvbuf:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
    return sock


class StreamProxy:
    def __init__(self, cfg, shaper_kwargs):
        self.cfg = cfg
        self._shaper_kwargs = shaper_kwargs
        self._server: Optional[asyncio.AbstractServer] = None
        self._tasks = set()
        self._writers: List[asyncio.StreamWriter] = []
        self.shapers: List[Shaper] = []
        self.connections = 0
        self.refused = 0

    async def start(self) -> None:
        host, port = self.cfg.listen
        info = socket.getaddrinfo(host, port, type=socket.SOCK_STREAM)[0]
        sock = _socket_for(info[0], self.cfg.socket_buffer)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(info[4])
        sock.listen(128)
        sock.setblocking(False)
        self._server = await asyncio.start_server(self._on_client, sock=sock)

    @property
    def address(self):
        return self._server.sockets[0].getsockname()[:2]

    async def _open_upstream(self):
        loop = asyncio.get_running_loop()
        host, port = self.cfg.upstream
        info = (await loop.getaddrinfo(host, port, type=socket.SOCK_STREAM))[0]
        sock = _socket_for(info[0], self.cfg.socket_buffer)
        sock.setblocking(False)
        try:
            await loop.sock_connect(sock, info[4])
        except OSError:
            sock.close()
            raise
        return await asyncio.open_connection(sock=sock)

    def _emit_to(self, writer: asyncio.StreamWriter):
        def emit(unit) -> None:
            if writer.is_closing():
                return
            try:
                if unit is _EOF:
                    if writer.can_write_eof():
                        writer.write_eof()
                else:
                    writer.write(unit)
            except (OSError, RuntimeError):
                writer.transport.abort()
        return emit

    async def _pump(self, reader: asyncio.StreamReader, shaper: Shaper) -> None:
        limit = self.cfg.queue_limit
        while True:
            if shaper.rate is not None:
                await shaper.wait_for_room(limit)
            try:
                data = await reader.read(CHUNK)
            except (ConnectionError, OSError):
                break
            shaper.offer(data if data else _EOF, len(data))
            if not data:
                break
        await shaper.drained()

    async def _on_client(self, creader, cwriter) -> None:
        task = asyncio.current_task()
        self._tasks.add(task)
        try:
            try:
                ureader, uwriter = await self._open_upstream()
            except OSError as exc:
                log.info("upstream %s unreachable: %s", self.cfg.upstream, exc)
                self.refused += 1
                cwriter.transport.abort()
                return
            self.connections += 1
            for w in (cwriter, uwriter):
                w.get_extra_info("socket").setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._writers += [cwriter, uwriter]
            up = Shaper(self._emit_to(uwriter), **self._shaper_kwargs)
            down = Shaper(self._emit_to(cwriter), **self._shaper_kwargs)
            self.shapers += [up, down]
            try:
                await asyncio.gather(self._pump(creader, up), self._pump(ureader, down))
            finally:
                for s in (up, down):
                    s.close()
                for w in (cwriter, uwriter):
                    w.close()
        finally:
            self._tasks.discard(task)

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
        for w in self._writers:
            w.transport.abort()
        for t in list(self._tasks):
            t.cancel()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)
