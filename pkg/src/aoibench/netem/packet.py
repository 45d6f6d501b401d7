"""Packet-mode proxy: a TUN device with a port-preserving address swap.

Clients dial ``peer_host`` (10.77.N.2).  Their packets reach the TUN device,
leave the proxy rewritten to come from ``alias_host`` (10.77.N.3) and go to
``local_host`` (10.77.N.1), where the upstream service must listen on the
same port.  Replies to the alias travel back the same way.  Both endpoints
keep their own transport state, so end-to-end ACK timing (and with it
Nagle's algorithm) sees the injected delay, which a terminating stream
proxy would hide.

Linux only; needs CAP_NET_ADMIN and ``/dev/net/tun``.
"""

from __future__ import annotations

import asyncio
import errno
import fcntl
import logging
import os
import socket
import struct
from typing import List, Optional

from .shaper import Shaper

log = logging.getLogger(__name__)

TUNSETIFF = 0x400454CA
IFF_TUN = 0x0001
IFF_NO_PI = 0x1000
SIOCGIFFLAGS = 0x8913
SIOCSIFFLAGS = 0x8914
SIOCSIFADDR = 0x8916
SIOCSIFNETMASK = 0x891C
IFF_UP = 0x1
_MAX_SUBNETS = 250

_available: Optional[bool] = None


def checksum(data: bytes) -> int:
    """Internet checksum (one's complement of the one's complement sum)."""
    if len(data) % 2:
        data += b"\0"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def adjust_checksum(csum: int, old: bytes, new: bytes) -> int:
    """Incremental update for replaced 16-bit-aligned words."""
    s = ~csum & 0xFFFF
    for i in range(0, len(old), 2):
        s += ~((old[i] << 8) | old[i + 1]) & 0xFFFF
        s += (new[i] << 8) | new[i + 1]
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def swap_addresses(pkt: bytes, src: bytes, dst: bytes) -> bytes:
    """Return an IPv4 packet with new source/destination and fixed checksums."""
    p = bytearray(pkt)
    ihl = (p[0] & 0x0F) * 4
    old = bytes(p[12:20])
    new = src + dst
    p[12:20] = new
    p[10:12] = adjust_checksum(int.from_bytes(p[10:12], "big"), old, new).to_bytes(2, "big")
    frag_offset = int.from_bytes(p[6:8], "big") & 0x1FFF
    proto = p[9]
    if frag_offset == 0:
        if proto == socket.IPPROTO_TCP and len(p) >= ihl + 18:
            off = ihl + 16
            c = adjust_checksum(int.from_bytes(p[off:off + 2], "big"), old, new)
            p[off:off + 2] = c.to_bytes(2, "big")
        elif proto == socket.IPPROTO_UDP and len(p) >= ihl + 8:
            off = ihl + 6
            c = int.from_bytes(p[off:off + 2], "big")
            if c:  # zero means the sender did not checksum
                c = adjust_checksum(c, old, new) or 0xFFFF
                p[off:off + 2] = c.to_bytes(2, "big")
    return bytes(p)


def _ifreq_addr(name: bytes, addr: str) -> bytes:
    return struct.pack("16sH2s4s8s", name, socket.AF_INET, b"\0\0", socket.inet_aton(addr), b"\0" * 8)


def _sysctl(path: str, value: str) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(value)
    except OSError:
        pass


class TunDevice:
    def __init__(self, index: int, fd: int, name: str):
        self.index = index
        self.fd = fd
        self.name = name
        self.local_host = f"10.77.{index}.1"
        self.peer_host = f"10.77.{index}.2"
        self.alias_host = f"10.77.{index}.3"

    @classmethod
    def create(cls) -> "TunDevice":
        last: Optional[OSError] = None
        for index in range(_MAX_SUBNETS):
            name = f"aoib{index}"
            fd = os.open("/dev/net/tun", os.O_RDWR | os.O_NONBLOCK)
            try:
                fcntl.ioctl(fd, TUNSETIFF, struct.pack("16sH", name.encode(), IFF_TUN | IFF_NO_PI))
            except OSError as exc:
                os.close(fd)
                last = exc
                if exc.errno == errno.EBUSY:
                    continue
                raise
            dev = cls(index, fd, name)
            try:
                dev._configure()
            except OSError:
                os.close(fd)
                raise
            return dev
        raise OSError(errno.EBUSY, f"no free TUN subnet: {last}")

    def _configure(self) -> None:
        name = self.name.encode()
        _sysctl(f"/proc/sys/net/ipv6/conf/{self.name}/disable_ipv6", "1")
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            fcntl.ioctl(s, SIOCSIFADDR, _ifreq_addr(name, self.local_host))
            fcntl.ioctl(s, SIOCSIFNETMASK, _ifreq_addr(name, "255.255.255.0"))
            flags = struct.unpack("16sH", fcntl.ioctl(s, SIOCGIFFLAGS, struct.pack("16sH", name, 0)))[1]
            fcntl.ioctl(s, SIOCSIFFLAGS, struct.pack("16sH", name, flags | IFF_UP))
        # rewritten packets arrive on the TUN device from addresses routed through it
        for conf in ("all", self.name):
            _sysctl(f"/proc/sys/net/ipv4/conf/{conf}/rp_filter", "0")

    def close(self) -> None:
        os.close(self.fd)


def packet_mode_available() -> bool:
    """True when a TUN device can be created and configured here."""
    global _available
    if _available is None:
        try:
            TunDevice.create().close()
            _available = True
        except OSError as exc:
            log.info("packet-mode proxy unavailable: %s", exc)
            _available = False
    return _available


class PacketProxy:
    def __init__(self, cfg, shaper_kwargs):
        self.cfg = cfg
        self._shaper_kwargs = shaper_kwargs
        self.dev: Optional[TunDevice] = None
        self.shapers: List[Shaper] = []
        self.ignored = 0

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        self.dev = TunDevice.create()
        self._local = socket.inet_aton(self.dev.local_host)
        self._peer = socket.inet_aton(self.dev.peer_host)
        self._alias = socket.inet_aton(self.dev.alias_host)
        self.up = Shaper(self._write, **self._shaper_kwargs)
        self.down = Shaper(self._write, **self._shaper_kwargs)
        self.shapers = [self.up, self.down]
        loop.add_reader(self.dev.fd, self._readable)

    @property
    def local_host(self) -> str:
        return self.dev.local_host

    @property
    def peer_host(self) -> str:
        return self.dev.peer_host

    @property
    def address(self):
        return self.dev.peer_host, self.cfg.upstream[1]

    def _write(self, pkt: bytes) -> None:
        try:
            os.write(self.dev.fd, pkt)
        except OSError:
            pass

    def _readable(self) -> None:
        for _ in range(256):
            try:
                pkt = os.read(self.dev.fd, 65535)
            except (BlockingIOError, InterruptedError):
                return
            if len(pkt) < 20 or pkt[0] >> 4 != 4:
                self.ignored += 1
                continue
            dst = pkt[16:20]
            if dst == self._peer:
                self.up.offer(swap_addresses(pkt, self._alias, self._local), len(pkt))
            elif dst == self._alias:
                self.down.offer(swap_addresses(pkt, self._peer, self._local), len(pkt))
            else:
                self.ignored += 1

    async def close(self) -> None:
        if self.dev is None:
            return
        asyncio.get_running_loop().remove_reader(self.dev.fd)
        for s in self.shapers:
            s.close()
        self.dev.close()
        self.dev = None
