"""Executing a dataflow graph.

Two schedulers share the same vertices and channels:

* ``threads`` runs one thread per operator instance with bounded, blocking
  inboxes and the real monotonic clock.
* ``replay`` runs everything on the calling thread. A seeded RNG picks the
  next action (deliver the head message of some channel, or step some
  instance), so a given seed always yields the same interleaving. Time is
  virtual: each instance advances its own clock by the simulated cost of the
  work it does.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

from ..errors import BarrierTimeout, ChannelClosed, ConfigError, Deadlock, SpawnFailure
from .channels import DEFAULT_CAPACITY, Channel, Inbox, RealClock, VirtualClock, broadcast_to_peers
from .graph import Broadcast, DataflowGraph, Edge, Forward, HashShard, OpKind
from .messages import STOP, Address, MsgKind
from .sharding import hash_shard
from .vertex import MapVertex, SinkVertex, SourceVertex, SplitVertex, UdfVertex, Vertex

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mode:
    kind: str = "asgd"
    k: int | None = None

    @classmethod
    def parse(cls, text: str | "Mode") -> "Mode":
        if isinstance(text, Mode):
            return text
        t = text.strip().lower()
        if t in ("asgd", "async"):
            return cls("asgd")
        if t == "sync":
            return cls("sync")
        if t.startswith("ssp"):
            _, _, k = t.partition(":")
            if not k:
                k = t[3:].strip("()")
            try:
                kk = int(k)
            except ValueError:
                raise ConfigError(f"bad SSP mode {text!r}; use ssp:<k>") from None
            if kk < 1:
                raise ConfigError("SSP k must be >= 1")
            return cls("ssp", kk)
        raise ConfigError(f"unknown mode {text!r}")

    def __str__(self) -> str:
        return f"ssp:{self.k}" if self.kind == "ssp" else self.kind


ASGD = Mode("asgd")
SYNC = Mode("sync")


def SSP(k: int) -> Mode:
    return Mode("ssp", k)


class Context:
    """Everything a vertex may touch: its inbox, outgoing channels and clock."""

    def __init__(self, runtime: "Runtime", vertex: Vertex, inbox: Inbox, clock):
        self.runtime = runtime
        self.vertex = vertex
        self.address = vertex.address
        self.inbox = inbox
        self.clock = clock
        self.mode: Mode = runtime.mode
        graph = runtime.graph
        self.out_edges: list[Edge] = graph.out_edges(vertex.spec.name)
        self.upstream_instances = graph.upstream_instances(vertex.spec.name)
        self.n_replicas = vertex.spec.instance_count
        self.out: dict[Address, Channel] = {}
        self.peers: dict[int, Channel] = {}
        self.processed = 0
        self.rejected = 0

    def _targets(self, edge: Edge, payload: Any, key) -> range | list[int]:
        n = self.runtime.graph.operator(edge.dst).instance_count
        r = edge.routing
        if isinstance(r, Broadcast):
            return range(n)
        if isinstance(r, HashShard):
            if key is None:
                if r.key_fn is None:
                    raise ConfigError(f"edge {edge.src}->{edge.dst} shards by key but none was given")
                key = r.key_fn(payload)
            return [hash_shard(key, n)]
        return [self.address.rank % n]

    def emit(self, kind: MsgKind, payload: Any, key=None, only_to: str | None = None) -> int:
        sent = 0
        now = self.clock.now()
        for edge in self.out_edges:
            if only_to is not None and edge.dst != only_to:
                continue
            for rank in self._targets(edge, payload, key):
                self.out[Address(edge.dst, rank)].send(kind, payload, now)
                sent += 1
        return sent

    def broadcast_peers(self, kind: MsgKind, payload: Any) -> list[int]:
        return broadcast_to_peers(kind, payload, self.address.rank, self.peers, self.clock.now())

    def stop_downstream(self) -> None:
        now = self.clock.now()
        for ch in self.out.values():
            ch.send(MsgKind.CONTROL, STOP, now)

    def reject(self, msg) -> None:
        self.rejected += 1
        log.debug("%s rejected %s from %s", self.address, msg.kind.name, msg.sender)


@dataclass
class RunStats:
    sent: int = 0
    received: int = 0
    dropped: int = 0
    rejected: int = 0
    per_operator: dict[str, dict[str, int]] = field(default_factory=dict)
    wall_ns: int = 0


def _default_vertex(spec, rank) -> Vertex:
    if spec.factory is not None:
        return spec.factory(spec, rank)
    if spec.kind is OpKind.SOURCE:
        return SourceVertex(spec, rank)
    if spec.kind is OpKind.MAP:
        return MapVertex(spec, rank)
    if spec.kind is OpKind.SPLIT:
        return SplitVertex(spec, rank)
    if spec.kind is OpKind.UDF:
        return UdfVertex(spec, rank)
    if spec.kind is OpKind.SINK:
        return SinkVertex(spec, rank)
    if spec.kind is OpKind.MODEL:
        from ..model import ModelOperator

        return ModelOperator(spec, rank)
    raise ConfigError(f"no vertex type for {spec.kind}")


class Runtime:
    """A running (or runnable) instance of a graph. Returned by :func:`run_graph`."""

    def __init__(
        self,
        graph: DataflowGraph,
        mode: Mode | str = ASGD,
        scheduler: str = "threads",
        seed: int = 0,
        queue_capacity: int = DEFAULT_CAPACITY,
        script: Sequence[tuple] | None = None,
        horizon_ns: int | None = None,
        policy: str = "random",
    ):
        if scheduler not in ("threads", "replay"):
            raise ConfigError(f"unknown scheduler {scheduler!r}")
        self.graph = graph
        self.mode = Mode.parse(mode)
        if self.mode.kind == "sync":
            for op in graph.models():
                if op.instance_count != 1:
                    raise ConfigError(
                        f"SYNC mode is the single-replica baseline; {op.name!r} has {op.instance_count} instances"
                    )
        self.scheduler = scheduler
        self.seed = seed
        self.script = list(script or [])
        self.horizon_ns = horizon_ns
        if policy not in ("random", "fifo", "timed"):
            raise ConfigError(f"unknown replay policy {policy!r}")
        self.policy = policy
        self.trace: list[tuple] = []
        self.errors: list[BaseException] = []
        self._abort = threading.Event()
        self._threads: list[threading.Thread] = []
        self._started = False
        self._done = False
        self._t0 = 0
        self._t1 = 0
        self._leftover = 0

        blocking = scheduler == "threads"
        self.contexts: dict[Address, Context] = {}
        for spec in graph.operators:
            for rank in range(spec.instance_count):
                v = _default_vertex(spec, rank)
                clock = RealClock() if blocking else VirtualClock()
                inbox = Inbox(v.address, queue_capacity, blocking=blocking)
                self.contexts[v.address] = Context(self, v, inbox, clock)

        self.channels: list[Channel] = []
        for edge in graph.edges:
            src_spec = graph.operator(edge.src)
            dst_spec = graph.operator(edge.dst)
            peer = graph.is_peer_edge(edge)
            for i in range(src_spec.instance_count):
                for j in range(dst_spec.instance_count):
                    if peer and i == j:
                        continue
                    a, b = Address(edge.src, i), Address(edge.dst, j)
                    ch = Channel(a, b, self.contexts[b].inbox, urgent=peer, buffered=not blocking)
                    self.channels.append(ch)
                    if peer:
                        self.contexts[a].peers[j] = ch
                    else:
                        self.contexts[a].out[b] = ch
        for ctx in self.contexts.values():
            ctx.vertex.bind(ctx)

    # -- inspection -------------------------------------------------------

    def vertices(self, op: str) -> list[Vertex]:
        n = self.graph.operator(op).instance_count
        return [self.contexts[Address(op, r)].vertex for r in range(n)]

    def stats(self) -> RunStats:
        st = RunStats(wall_ns=self.wall_ns)
        for ch in self.channels:
            st.sent += ch.sent
            d = st.per_operator.setdefault(ch.src.op, {"sent": 0, "received": 0, "rejected": 0})
            d["sent"] += ch.sent
        for addr, ctx in self.contexts.items():
            got = sum(ctx.inbox.received.values())
            st.received += got
            st.rejected += ctx.rejected
            d = st.per_operator.setdefault(addr.op, {"sent": 0, "received": 0, "rejected": 0})
            d["received"] += got
            d["rejected"] += ctx.rejected
        st.dropped = self._leftover
        return st

    @property
    def wall_ns(self) -> int:
        if self.scheduler == "replay":
            return max((c.clock.now() for c in self.contexts.values()), default=0)
        end = self._t1 or time.monotonic_ns()
        return end - self._t0 if self._t0 else 0

    # -- control ----------------------------------------------------------

    def start(self) -> "Runtime":
        if self._started:
            return self
        self._started = True
        self._t0 = time.monotonic_ns()
        if self.scheduler == "threads":
            for ctx in self.contexts.values():
                t = threading.Thread(target=self._thread_main, args=(ctx,), name=str(ctx.address), daemon=True)
                try:
                    t.start()
                except RuntimeError as exc:
                    self.abort()
                    raise SpawnFailure(str(exc)) from exc
                self._threads.append(t)
        return self

    def stop(self) -> None:
        """Halt every source; the rest of the graph drains gracefully."""
        for ctx in self.contexts.values():
            if ctx.vertex.is_source:
                ctx.vertex.halt()

    def abort(self) -> None:
        """Tear down immediately, discarding undelivered messages."""
        self._abort.set()
        for ctx in self.contexts.values():
            self._leftover += ctx.inbox.close()
        for ch in self.channels:
            self._leftover += ch.close()

    def join(self, timeout: float | None = None) -> "Runtime":
        if not self._started:
            self.start()
        if self.scheduler == "replay":
            if not self._done:
                self._run_replay()
        else:
            deadline = None if timeout is None else time.monotonic() + timeout
            for t in self._threads:
                left = None if deadline is None else max(0.0, deadline - time.monotonic())
                t.join(left)
                if t.is_alive():
                    raise TimeoutError(f"{t.name} still running")
            if not self._done:
                self._finish()
        if self.errors:
            raise self.errors[0]
        return self

    def _finish(self) -> None:
        self._done = True
        self._t1 = time.monotonic_ns()
        for ctx in self.contexts.values():
            self._leftover += ctx.inbox.close()
        for ch in self.channels:
            self._leftover += ch.close()

    # -- threads ----------------------------------------------------------

    def _thread_main(self, ctx: Context) -> None:
        v = ctx.vertex
        try:
            while not v.finished and not self._abort.is_set():
                if v.is_source:
                    v.poll()
                    continue
                item = ctx.inbox.take(allow_normal=v.accepts_data(), timeout=0.05)
                if item is None:
                    if ctx.inbox.closed:
                        break
                    v.check_timeouts()
                    continue
                ctx.processed += 1
                v.on_message(item[0])
        except ChannelClosed:
            if not self._abort.is_set():
                self.errors.append(ChannelClosed(f"{ctx.address}: downstream closed early"))
                self.abort()
        except BaseException as exc:  # surfaced by join()
            log.error("%s failed: %r", ctx.address, exc)
            self.errors.append(exc)
            self.abort()

    # -- deterministic replay --------------------------------------------

    def _runnable(self, ctx: Context) -> bool:
        v = ctx.vertex
        if v.finished:
            return False
        if self.horizon_ns is not None and ctx.clock.now() > self.horizon_ns:
            return False
        if v.is_source:
            return True
        return ctx.inbox.ready(v.accepts_data())

    def _enabled(self) -> list[tuple]:
        acts: list[tuple] = [("d", ch) for ch in self.channels if ch.in_flight]
        acts.extend(("s", ctx) for ctx in self.contexts.values() if self._runnable(ctx))
        return acts

    def _act_time(self, act: tuple) -> tuple[int, int]:
        # deliveries at time t go before steps at time t so the step sees them
        if act[0] == "d":
            return (act[1].in_flight[0][1], 0)
        ctx: Context = act[1]
        t = ctx.clock.now()
        if not ctx.vertex.is_source:
            t = max(t, ctx.inbox.head_arrival(ctx.vertex.accepts_data()))
        return (t, 1)

    def _execute(self, act: tuple) -> None:
        if act[0] == "d":
            ch: Channel = act[1]
            ch.deliver()
            self.trace.append(("d", ch.src.op, ch.src.rank, ch.dst.op, ch.dst.rank))
            return
        ctx: Context = act[1]
        v = ctx.vertex
        self.trace.append(("s", ctx.address.op, ctx.address.rank))
        if v.is_source:
            v.poll()
            return
        msg, arrival = ctx.inbox.take(allow_normal=v.accepts_data())
        ctx.clock.observe(arrival)
        ctx.clock.charge(v.cost_ns(msg))
        ctx.processed += 1
        v.on_message(msg)

    def _scripted(self, entry: tuple) -> tuple:
        if entry[0] in ("deliver", "d"):
            src, dst = Address(*entry[1]), Address(*entry[2])
            for ch in self.channels:
                if ch.src == src and ch.dst == dst:
                    if not ch.in_flight:
                        raise Deadlock(f"script: nothing in flight on {src} -> {dst}")
                    return ("d", ch)
            raise ConfigError(f"script: no channel {src} -> {dst}")
        if entry[0] in ("step", "s"):
            ctx = self.contexts[Address(*entry[1])]
            if not self._runnable(ctx):
                raise Deadlock(f"script: {ctx.address} has nothing to do")
            return ("s", ctx)
        raise ConfigError(f"script: bad entry {entry!r}")

    def _run_replay(self) -> None:
        rng = random.Random(self.seed)
        script = list(self.script)
        try:
            while True:
                if script:
                    act = self._scripted(script.pop(0))
                else:
                    acts = self._enabled()
                    if not acts:
                        break
                    if self.policy == "timed":
                        act = min(acts, key=self._act_time)
                    elif self.policy == "fifo":
                        act = acts[0]
                    else:
                        act = rng.choice(acts)
                self._execute(act)
            pending = [c.address for c in self.contexts.values() if not c.vertex.finished]
            if pending and self.horizon_ns is None:
                if any(getattr(c.vertex, "in_barrier", False) for c in self.contexts.values()):
                    raise BarrierTimeout(f"barrier never released; stuck: {pending}")
                raise Deadlock(f"no runnable action but unfinished: {pending}")
        except BaseException as exc:
            self.errors.append(exc)
        finally:
            self._finish()


def run_graph(graph: DataflowGraph, mode: Mode | str = ASGD, **kwargs) -> Runtime:
    """Start executing ``graph``. Call ``join()`` on the result to wait for it.

    Keyword arguments are passed to :class:`Runtime` (``scheduler``, ``seed``,
    ``queue_capacity``, ``script``, ``horizon_ns``, ``policy``).
    """
    return Runtime(graph, mode, **kwargs).start()
