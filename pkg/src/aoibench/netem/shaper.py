"""Per-direction impairment: FIFO token bucket followed by a constant delay."""

from __future__ import annotations

import asyncio
import collections
from dataclasses import dataclass
from typing import Any, Callable, Deque, List, Optional, Tuple


@dataclass
class DirectionStats:
    units_in: int = 0
    bytes_in: int = 0
    units_out: int = 0
    bytes_out: int = 0
    dropped: int = 0
    dropped_bytes: int = 0


@dataclass
class TraceEntry:
    arrival: float
    departure: float  # left the token bucket
    release: float  # scheduled release (departure + delay)
    emitted: float  # actual emission time
    size: int


class Shaper:
    """Schedules units for release on the event loop.

    Units depart the token bucket in arrival order.  The bucket holds at most
    ``burst`` bytes; a unit departs once the bucket holds ``min(size, burst)``
    and the bucket then pays the full size, possibly going into debt, so that
    departures never exceed ``rate * elapsed + burst``.  Each unit is released
    ``delay`` seconds after its departure.

    With ``limit_bytes`` set, units arriving while more than that many bytes
    wait in the bucket are dropped (drop-tail).  Stream mode leaves it unset
    and pauses its reader on :attr:`backlog_bytes` instead.
    """

    def __init__(self, emit: Callable[[Any], None], delay_s: float = 0.0,
                 rate_bps: Optional[float] = None, burst_bytes: int = 1500,
                 limit_bytes: Optional[int] = None, trace: bool = False,
                 loop: Optional[asyncio.AbstractEventLoop] = None):
        if delay_s < 0:
            raise ValueError("delay must be >= 0")
        if rate_bps is not None and rate_bps <= 0:
            raise ValueError("rate limit must be positive")
        if burst_bytes < 1:
            raise ValueError("burst must be >= 1 byte")
        self._emit = emit
        self.delay = delay_s
        self.rate = None if rate_bps is None else rate_bps / 8.0  # bytes/s
        self.burst = burst_bytes
        self.limit = limit_bytes
        self.stats = DirectionStats()
        self.trace: Optional[List[TraceEntry]] = [] if trace else None
        self._loop = loop or asyncio.get_running_loop()
        self._tokens = float(burst_bytes)
        self._vt = self._loop.time()  # last departure
        self._waiting: Deque[Tuple[float, int]] = collections.deque()  # (departure, size)
        self._line: Deque[Tuple[float, float, float, int, Any]] = collections.deque()
        self._timer: Optional[asyncio.TimerHandle] = None
        self._closed = False

    def _departure(self, now: float, size: int) -> float:
        if self.rate is None:
            return now
        start = max(now, self._vt)
        tokens = min(self.burst, self._tokens + (start - self._vt) * self.rate)
        need = min(size, self.burst)
        if tokens >= need:
            dep = start
        else:
            dep = start + (need - tokens) / self.rate
            tokens = need
        self._tokens = tokens - size
        self._vt = dep
        return dep

    def _purge(self, now: float) -> None:
        w = self._waiting
        while w and w[0][0] <= now:
            w.popleft()

    @property
    def backlog_bytes(self) -> int:
        """Bytes accepted but still waiting on the token bucket."""
        self._purge(self._loop.time())
        return sum(s for _, s in self._waiting)

    @property
    def pending_units(self) -> int:
        return len(self._line)

    def offer(self, unit: Any, size: int) -> bool:
        """Accept a unit; returns ``False`` if it was dropped."""
        if self._closed:
            return False
        now = self._loop.time()
        st = self.stats
        st.units_in += 1
        st.bytes_in += size
        if self.limit is not None and self.rate is not None:
            if self.backlog_bytes + size > self.limit:
                st.dropped += 1
                st.dropped_bytes += size
                return False
        dep = self._departure(now, size)
        if dep > now:
            self._waiting.append((dep, size))
        self._line.append((now, dep, dep + self.delay, size, unit))
        if self._timer is None:
            self._arm()
        return True

    def _arm(self) -> None:
        if self._line and not self._closed:
            self._timer = self._loop.call_at(self._line[0][2], self._fire)
        else:
            self._timer = None

    def _fire(self) -> None:
        now = self._loop.time()
        line = self._line
        st = self.stats
        while line and line[0][2] <= now:
            arrival, dep, release, size, unit = line.popleft()
            st.units_out += 1
            st.bytes_out += size
            if self.trace is not None:
                self.trace.append(TraceEntry(arrival, dep, release, now, size))
            self._emit(unit)
        self._arm()

    async def wait_for_room(self, limit: int) -> None:
        """Park until the bucket backlog is at most ``limit`` bytes."""
        while not self._closed:
            backlog = self.backlog_bytes
            if backlog <= limit:
                return
            excess = backlog - limit
            await asyncio.sleep(max(excess / self.rate, 0.0005) if self.rate else 0.0005)

    async def drained(self) -> None:
        """Wait until every accepted unit has been emitted."""
        while self._line and not self._closed:
            await asyncio.sleep(max(self._line[-1][2] - self._loop.time(), 0.0005))

    def close(self) -> None:
        self._closed = True
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        self._line.clear()
        self._waiting.clear()
