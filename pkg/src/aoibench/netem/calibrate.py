"""Checks that a proxy configuration does what it says: echo RTT and bulk goodput over TCP."""

from __future__ import annotations

import asyncio
import socket
import statistics
import time
from dataclasses import dataclass, replace
from typing import List, Optional

from . import ImpairmentConfig, ProxyMode, run_proxy


@dataclass
class Calibration:
    mode: ProxyMode
    rtt_ms: List[float]
    goodput_bps: Optional[float] = None

    @property
    def median_rtt_ms(self) -> float:
        return statistics.median(self.rtt_ms)


async def _echo(reader, writer) -> None:
    try:
        while True:
            data = await reader.read(65536)
            if not data:
                break
            writer.write(data)
            await writer.drain()
    except ConnectionError:
        pass
    finally:
        writer.close()


async def _sink(reader, writer) -> None:
    total = 0
    try:
        while True:
            data = await reader.read(65536)
            if not data:
                break
            total += len(data)
        writer.write(total.to_bytes(8, "big"))
        await writer.drain()
    except ConnectionError:
        pass
    finally:
        writer.close()


class _Through:
    """A TCP server behind a proxy, and the address clients should dial."""

    def __init__(self, cfg: ImpairmentConfig, handler):
        self.cfg = cfg
        self.handler = handler
        self.server = None
        self.proxy = None

    async def __aenter__(self):
        if self.cfg.mode is ProxyMode.PACKET:
            self.proxy = await run_proxy(replace(self.cfg, upstream=(self.cfg.upstream[0], 0)))
            self.server = await asyncio.start_server(self.handler, self.proxy.upstream_host, 0)
            port = self.server.sockets[0].getsockname()[1]
            self.address = (self.proxy.address[0], port)
        else:
            self.server = await asyncio.start_server(self.handler, self.cfg.upstream[0], 0)
            port = self.server.sockets[0].getsockname()[1]
            self.proxy = await run_proxy(replace(self.cfg, upstream=(self.cfg.upstream[0], port)))
            self.address = self.proxy.address
        return self

    async def __aexit__(self, *exc):
        await self.proxy.close()
        self.server.close()
        await self.server.wait_closed()


async def echo_rtt(cfg: ImpairmentConfig, samples: int = 20, size: int = 32) -> List[float]:
    """Round trip times in ms of ``size``-byte pings, one at a time, Nagle off."""
    async with _Through(cfg, _echo) as t:
        reader, writer = await asyncio.open_connection(*t.address)
        writer.get_extra_info("socket").setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        out = []
        ping = b"p" * size
        try:
            for _ in range(samples):
                t0 = time.perf_counter()
                writer.write(ping)
                await writer.drain()
                await reader.readexactly(size)
                out.append((time.perf_counter() - t0) * 1000)
        finally:
            writer.close()
        return out


async def bulk_goodput(cfg: ImpairmentConfig, nbytes: int = 2_000_000) -> float:
    """Bits per second of application payload, from first write to the sink's
    byte count arriving back."""
    async with _Through(cfg, _sink) as t:
        reader, writer = await asyncio.open_connection(*t.address)
        block = b"x" * 65536
        t0 = time.perf_counter()
        sent = 0
        while sent < nbytes:
            n = min(len(block), nbytes - sent)
            writer.write(block[:n])
            await writer.drain()
            sent += n
        writer.write_eof()
        total = int.from_bytes(await reader.readexactly(8), "big")
        elapsed = time.perf_counter() - t0
        writer.close()
        if total != nbytes:
            raise RuntimeError(f"sink saw {total} of {nbytes} bytes")
        return nbytes * 8 / elapsed


async def calibrate(cfg: ImpairmentConfig, samples: int = 20,
                    goodput_bytes: Optional[int] = None) -> Calibration:
    rtts = await echo_rtt(cfg, samples)
    gp = await bulk_goodput(cfg, goodput_bytes) if goodput_bytes else None
    return Calibration(cfg.mode, rtts, gp)
