"""Point-to-point channels, per-instance inboxes and clocks.

Every directed (sender instance, receiver instance) pair owns one
:class:`Channel`. The channel numbers its messages 1, 2, 3, ... and the
receiving :class:`Inbox` rejects any gap or reordering, so per-channel FIFO
is checked on every delivery rather than assumed.

Inboxes have two lanes. Peer traffic between Model replicas (gradients and
their control signals) uses the priority lane and is taken first; everything
else uses the data lane, which is bounded and blocks producers when full.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from typing import Any, Mapping

from ..errors import ChannelClosed, ProtocolError
from .messages import Address, Message, MsgKind

DEFAULT_CAPACITY = 1024


class RealClock:
    def now(self) -> int:
        return time.monotonic_ns()

    def sleep_until(self, ts: int) -> None:
        delay = (ts - time.monotonic_ns()) / 1e9
        if delay > 0:
            time.sleep(delay)

    def charge(self, ns: int) -> None:
        pass

    def observe(self, ts: int) -> None:
        pass


class VirtualClock:
    """Per-context simulated time used by the deterministic scheduler.

    Work advances it through :meth:`charge`; receiving a message moves it to
    at least the message's arrival time.
    """

    def __init__(self, t: int = 0):
        self.t = t

    def now(self) -> int:
        return self.t

    def sleep_until(self, ts: int) -> None:
        self.t = max(self.t, ts)

    def charge(self, ns: int) -> None:
        self.t += int(ns)

    def observe(self, ts: int) -> None:
        self.t = max(self.t, ts)


class Inbox:
    def __init__(self, owner: Address, capacity: int = DEFAULT_CAPACITY, blocking: bool = True):
        self.owner = owner
        self.capacity = capacity
        self.blocking = blocking
        self.urgent: deque[tuple[Message, int]] = deque()
        self.normal: deque[tuple[Message, int]] = deque()
        self.closed = False
        self._last_seq: dict[Address, int] = {}
        self.received: dict[Address, int] = {}
        self._cond = threading.Condition()

    def __len__(self) -> int:
        return len(self.urgent) + len(self.normal)

    def put(self, msg: Message, urgent: bool, arrival: int = 0, timeout: float | None = None) -> None:
        with self._cond:
            if self.closed:
                raise ChannelClosed(f"{self.owner} is shut down")
            expected = self._last_seq.get(msg.sender, 0) + 1
            if msg.seq != expected:
                raise ProtocolError(f"{msg.sender} -> {self.owner}: got seq {msg.seq}, expected {expected}")
            if not urgent and self.blocking:
                deadline = None if timeout is None else time.monotonic() + timeout
                while len(self.normal) >= self.capacity and not self.closed:
                    left = None if deadline is None else deadline - time.monotonic()
                    if left is not None and left <= 0:
                        raise TimeoutError(f"{self.owner} inbox full")
                    self._cond.wait(left)
                if self.closed:
                    raise ChannelClosed(f"{self.owner} is shut down")
            self._last_seq[msg.sender] = msg.seq
            (self.urgent if urgent else self.normal).append((msg, arrival))
            self._cond.notify_all()

    def ready(self, allow_normal: bool = True) -> bool:
        return bool(self.urgent) or (allow_normal and bool(self.normal))

    def head_arrival(self, allow_normal: bool = True) -> int | None:
        """Arrival stamp of the message :meth:`take` would return next."""
        if self.urgent:
            return self.urgent[0][1]
        if allow_normal and self.normal:
            return self.normal[0][1]
        return None

    def take(self, allow_normal: bool = True, timeout: float | None = None) -> tuple[Message, int] | None:
        """Pop the next message, priority lane first. ``None`` on timeout or close."""
        with self._cond:
            if self.blocking:
                deadline = None if timeout is None else time.monotonic() + timeout
                while not self.ready(allow_normal) and not self.closed:
                    left = None if deadline is None else deadline - time.monotonic()
                    if left is not None and left <= 0:
                        return None
                    self._cond.wait(left)
            if self.urgent:
                item = self.urgent.popleft()
            elif allow_normal and self.normal:
                item = self.normal.popleft()
            else:
                return None
            sender = item[0].sender
            self.received[sender] = self.received.get(sender, 0) + 1
            self._cond.notify_all()
            return item

    def close(self) -> int:
        """Refuse further messages; returns how many undelivered ones were discarded."""
        with self._cond:
            self.closed = True
            dropped = len(self.urgent) + len(self.normal)
            self.urgent.clear()
            self.normal.clear()
            self._cond.notify_all()
            return dropped


class Channel:
    """One directed link. ``send`` stamps the next sequence number."""

    def __init__(self, src: Address, dst: Address, inbox: Inbox, urgent: bool = False, buffered: bool = False):
        self.src = src
        self.dst = dst
        self.inbox = inbox
        self.urgent = urgent
        # buffered channels hold messages "in flight" until deliver() is called
        self.buffered = buffered
        self.in_flight: deque[tuple[Message, int]] = deque()
        self.sent = 0
        self.closed = False
        self._lock = threading.Lock()

    def send(self, kind: MsgKind, payload: Any, ts: int = 0) -> Message:
        with self._lock:
            if self.closed or self.inbox.closed:
                raise ChannelClosed(f"{self.src} -> {self.dst} is closed")
            self.sent += 1
            msg = Message(kind, self.src, self.sent, payload)
            if self.buffered:
                self.in_flight.append((msg, ts))
                return msg
        # outside the lock: a full inbox blocks only this sender
        self.inbox.put(msg, self.urgent, ts)
        return msg

    def deliver(self) -> Message:
        msg, ts = self.in_flight.popleft()
        self.inbox.put(msg, self.urgent, ts)
        return msg

    def close(self) -> int:
        self.closed = True
        dropped = len(self.in_flight)
        self.in_flight.clear()
        return dropped


def send(channel: Channel, kind: MsgKind, payload: Any, ts: int = 0) -> Message:
    return channel.send(kind, payload, ts)


def broadcast_to_peers(
    kind: MsgKind, payload: Any, self_rank: int, peers: Mapping[int, Channel], ts: int = 0
) -> list[int]:
    """Send to every peer rank except ``self_rank``; returns the ranks reached in order."""
    if kind is not MsgKind.GRADIENT and kind is not MsgKind.CONTROL:
        raise ValueError(f"peer broadcast carries gradients, not {kind.name}")
    reached = []
    for rank in sorted(peers):
        if rank == self_rank:
            continue
        peers[rank].send(kind, payload, ts)
        reached.append(rank)
    return reached
