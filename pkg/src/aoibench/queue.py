"""Application buffer between the message producer and the network sender.

Three policies: unbounded FIFO, bounded FIFO whose producer parks while the
queue is full, and a single-slot head-drop buffer the producer overwrites
without ever waiting.  One producer task and one consumer task per queue.
"""

from __future__ import annotations

import asyncio
import collections
import enum
import re
import time
from dataclasses import dataclass
from typing import Any, Deque, Optional


class QueueClosed(RuntimeError):
    """Push on a closed queue."""


class EndOfQueue(Exception):
    """Pop on a closed queue with nothing left in it."""


class PushOutcome(str, enum.Enum):
    STORED = "stored"
    REPLACED = "replaced"
    BLOCKED_THEN_STORED = "blocked-then-stored"


class PolicyKind(str, enum.Enum):
    FIFO_UNBOUNDED = "fifo-inf"
    FIFO_BOUNDED = "fifo"
    DROP_HEAD = "drop"


@dataclass(frozen=True)
class QueuePolicy:
    kind: PolicyKind
    capacity: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind is PolicyKind.FIFO_BOUNDED:
            if self.capacity is None or self.capacity < 1:
                raise ValueError("bounded FIFO needs capacity >= 1")
        elif self.kind is PolicyKind.DROP_HEAD:
            object.__setattr__(self, "capacity", 1)
        elif self.capacity is not None:
            raise ValueError("unbounded FIFO takes no capacity")

    @property
    def label(self) -> str:
        if self.kind is PolicyKind.FIFO_BOUNDED:
            return f"fifo-{self.capacity}"
        return self.kind.value

    @property
    def is_fifo(self) -> bool:
        return self.kind is not PolicyKind.DROP_HEAD

    @classmethod
    def parse(cls, text: str) -> "QueuePolicy":
        """``fifo-16``, ``fifo-inf`` or ``drop``."""
        t = text.strip().lower()
        if t in ("drop", "drophead", "drop-head", "head-drop"):
            return DropHead()
        if t in ("fifo-inf", "fifo", "fifo-unbounded"):
            return FifoUnbounded()
        m = re.fullmatch(r"fifo-(\d+)", t)
        if m:
            return FifoBounded(int(m.group(1)))
        raise ValueError(f"unknown queue policy {text!r}")

    def __str__(self) -> str:
        return self.label


def FifoUnbounded() -> QueuePolicy:
    return QueuePolicy(PolicyKind.FIFO_UNBOUNDED)


def FifoBounded(capacity: int) -> QueuePolicy:
    return QueuePolicy(PolicyKind.FIFO_BOUNDED, capacity)


def DropHead() -> QueuePolicy:
    return QueuePolicy(PolicyKind.DROP_HEAD)


@dataclass
class QueueCounters:
    pushed: int = 0
    popped: int = 0
    dropped: int = 0
    producer_block_ns: int = 0

    @property
    def producer_block_ms(self) -> float:
        return self.producer_block_ns / 1e6


class MessageQueue:
    def __init__(self, policy: QueuePolicy):
        self.policy = policy
        self.counters = QueueCounters()
        self._items: Deque[Any] = collections.deque()
        self._closed = False
        self._getter: Optional[asyncio.Future] = None
        self._putter: Optional[asyncio.Future] = None

    def __len__(self) -> int:
        return len(self._items)

    @property
    def closed(self) -> bool:
        return self._closed

    def full(self) -> bool:
        cap = self.policy.capacity
        return self.policy.kind is PolicyKind.FIFO_BOUNDED and len(self._items) >= cap

    @staticmethod
    def _wake(fut: Optional[asyncio.Future]) -> None:
        if fut is not None and not fut.done():
            fut.set_result(None)

    def _store(self, msg: Any) -> None:
        self._items.append(msg)
        self.counters.pushed += 1
        self._wake(self._getter)

    async def push(self, msg: Any) -> PushOutcome:
        if self._closed:
            raise QueueClosed("push on closed queue")
        if self.policy.kind is PolicyKind.DROP_HEAD:
            outcome = PushOutcome.STORED
            if self._items:
                self._items.popleft()
                self.counters.dropped += 1
                outcome = PushOutcome.REPLACED
            self._store(msg)
            return outcome
        if not self.full():
            self._store(msg)
            return PushOutcome.STORED
        t0 = time.monotonic_ns()
        try:
            while self.full():
                if self._closed:
                    raise QueueClosed("queue closed while producer was blocked")
                self._putter = asyncio.get_running_loop().create_future()
                await self._putter
        finally:
            self._putter = None
            self.counters.producer_block_ns += time.monotonic_ns() - t0
        if self._closed:
            raise QueueClosed("queue closed while producer was blocked")
        self._store(msg)
        return PushOutcome.BLOCKED_THEN_STORED

    async def pop(self) -> Any:
        while not self._items:
            if self._closed:
                raise EndOfQueue()
            self._getter = asyncio.get_running_loop().create_future()
            try:
                await self._getter
            finally:
                self._getter = None
        msg = self._items.popleft()
        self.counters.popped += 1
        self._wake(self._putter)
        return msg

    def close(self) -> None:
        """Refuse further pushes; queued messages can still be popped."""
        self._closed = True
        self._wake(self._getter)
        self._wake(self._putter)
