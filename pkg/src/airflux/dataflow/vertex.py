"""Operator instances. Each vertex owns its state and only talks via its context."""

from __future__ import annotations

from typing import Any, Iterable, Iterator

from ..errors import UnknownMessageKind
from .graph import OperatorSpec
from .messages import Address, Control, Message, MsgKind


class Vertex:
    is_source = False

    def __init__(self, spec: OperatorSpec, rank: int):
        self.spec = spec
        self.rank = rank
        self.address = Address(spec.name, rank)
        self.ctx = None
        self.finished = False
        self.stops_seen = 0

    def bind(self, ctx) -> None:
        self.ctx = ctx

    def accepts_data(self) -> bool:
        """Whether data-lane messages may be taken right now."""
        return True

    def on_message(self, msg: Message) -> None:
        if msg.kind is MsgKind.CONTROL and msg.payload.op == "stop":
            self.stops_seen += 1
            if self.stops_seen >= self.ctx.upstream_instances:
                self.on_upstream_done()
            return
        self.process(msg)

    def process(self, msg: Message) -> None:
        raise UnknownMessageKind(f"{self.address} cannot handle {msg.kind.name}")

    def on_upstream_done(self) -> None:
        self.ctx.stop_downstream()
        self.finished = True

    def cost_ns(self, msg: Message) -> int:
        """Simulated processing time of ``msg`` under the virtual clock."""
        return 1_000

    def check_timeouts(self) -> None:
        pass

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.address}>"


class SourceVertex(Vertex):
    """Emits one record per poll from an iterable until it runs dry or is halted.

    ``user_fn(rank)`` must return the iterable for that instance.
    """

    is_source = True

    def __init__(self, spec: OperatorSpec, rank: int, items: Iterable[Any] | None = None):
        super().__init__(spec, rank)
        if items is None:
            items = spec.user_fn(rank)
        self._it: Iterator[Any] = iter(items)
        self.halted = False
        self.emitted = 0

    def halt(self) -> None:
        self.halted = True

    def poll(self) -> None:
        item = None if self.halted else next(self._it, _END)
        if self.halted or item is _END:
            self.ctx.stop_downstream()
            self.finished = True
            return
        self.ctx.clock.charge(200)
        self.ctx.emit(MsgKind.RECORD, item)
        self.emitted += 1


_END = object()


class MapVertex(Vertex):
    def process(self, msg: Message) -> None:
        if msg.kind is not MsgKind.RECORD:
            super().process(msg)
        out = self.spec.user_fn(msg.payload)
        if out is not None:
            self.ctx.emit(MsgKind.RECORD, out)


class SplitVertex(Vertex):
    """``user_fn(record)`` yields ``(target_operator, record)`` pairs."""

    def process(self, msg: Message) -> None:
        if msg.kind is not MsgKind.RECORD:
            super().process(msg)
        for target, out in self.spec.user_fn(msg.payload):
            kind = MsgKind.RECORD
            if isinstance(out, tuple) and len(out) == 2 and isinstance(out[0], MsgKind):
                kind, out = out
            self.ctx.emit(kind, out, only_to=target)


class UdfVertex(Vertex):
    """``user_fn(record)`` yields ``(kind, payload)`` messages to emit.

    A stateful user function may expose ``flush()`` returning the same, which
    is called once all upstream instances have stopped.
    """

    def __init__(self, spec: OperatorSpec, rank: int):
        super().__init__(spec, rank)
        fn = spec.user_fn
        # one independent state per instance
        self.fn = fn() if spec.options.get("fn_is_factory") else fn

    def process(self, msg: Message) -> None:
        if msg.kind is not MsgKind.RECORD:
            super().process(msg)
        for kind, out in self.fn(msg.payload):
            self.ctx.emit(kind, out)

    def on_upstream_done(self) -> None:
        flush = getattr(self.fn, "flush", None)
        if flush is not None:
            for kind, out in flush():
                self.ctx.emit(kind, out)
        super().on_upstream_done()


class SinkVertex(Vertex):
    def __init__(self, spec: OperatorSpec, rank: int):
        super().__init__(spec, rank)
        self.items: list[tuple[MsgKind, Any]] = []

    def process(self, msg: Message) -> None:
        if self.spec.user_fn is not None:
            self.spec.user_fn(msg.payload)
        self.items.append((msg.kind, msg.payload))


__all__ = ["Vertex", "SourceVertex", "MapVertex", "SplitVertex", "UdfVertex", "SinkVertex", "Control"]
