"""Event ingestion, tumbling mini-batches and throughput measurement."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np

from .dataflow.channels import RealClock
from .dataflow.graph import DataflowGraph, HashShard, OpKind, OperatorSpec
from .dataflow.messages import MsgKind, register_payload
from .dataflow.vertex import SourceVertex
from .errors import EmptyDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Event:
    payload: Any
    ts: int


@dataclass(frozen=True)
class MiniBatch:
    id: int
    pairs: tuple
    created_ts: int

    def __len__(self) -> int:
        return len(self.pairs)

    @cached_property
    def xs(self) -> np.ndarray:
        return np.asarray([p[0] for p in self.pairs])

    @cached_property
    def ys(self) -> np.ndarray:
        return np.asarray([p[1] for p in self.pairs])


register_payload(MsgKind.MINIBATCH, MiniBatch)


def tumble(events: Iterable[Event], b: int, start_id: int = 1) -> Iterator[MiniBatch]:
    """Cut the stream into consecutive, non-overlapping batches of ``b`` events.

    A trailing partial window is never emitted.
    """
    if b < 1:
        raise ValueError("batch size must be >= 1")
    it = iter(events)
    for bid in itertools.count(start_id):
        chunk = list(itertools.islice(it, b))
        if len(chunk) < b:
            return
        yield MiniBatch(bid, tuple(e.payload for e in chunk), chunk[-1].ts)


def replay_dataset(
    dataset: Sequence[Any],
    passes: int | None = 1,
    rate: float | None = None,
    clock=None,
    duration_ns: int | None = None,
) -> Iterator[Event]:
    """Emit ``dataset`` cyclically as timestamped events.

    ``passes=None`` repeats forever. With a ``rate`` (events/s) event ``i`` is
    stamped with its scheduled arrival ``t0 + i/rate`` and the generator waits
    until then; if it falls behind it emits late but keeps the scheduled
    stamp, so queueing delay shows up as latency. ``duration_ns`` ends the
    stream once scheduled (or, unpaced, actual) time passes ``t0 + duration``.
    """
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    clock = clock or RealClock()
    t0 = clock.now()
    last = t0 - 1
    period = 1e9 / rate if rate else None
    reps = itertools.count() if passes is None else range(passes)
    i = 0
    for _ in reps:
        for rec in dataset:
            if period is not None:
                ts = t0 + int(i * period)
                if duration_ns is not None and ts - t0 >= duration_ns:
                    return
                clock.sleep_until(ts)
            else:
                ts = max(clock.now(), last + 1)
                if duration_ns is not None and ts - t0 >= duration_ns:
                    return
            last = ts
            i += 1
            yield Event(rec, ts)


class MiniBatchGenerator(SourceVertex):
    """Entry-point operator: replays a dataset, tumbles it, routes the batches."""

    def __init__(self, spec: OperatorSpec, rank: int):
        super(SourceVertex, self).__init__(spec, rank)
        o = spec.options
        self.dataset = o["dataset"]
        self.batch_size = int(o["batch_size"])
        self.passes = o.get("passes", 1)
        self.rate = o.get("rate")
        self.duration_ns = o.get("duration_ns")
        self.key_fn: Callable[[MiniBatch], Any] | None = o.get("key_fn")
        self.halted = False
        self.emitted = 0
        self.t_start: int | None = None
        self._it: Iterator[MiniBatch] | None = None

    def poll(self) -> None:
        if self._it is None:
            self.t_start = self.ctx.clock.now()
            events = replay_dataset(self.dataset, self.passes, self.rate, self.ctx.clock, self.duration_ns)
            self._it = tumble(events, self.batch_size)
        batch = None if self.halted else next(self._it, None)
        if batch is None:
            self.ctx.stop_downstream()
            self.finished = True
            return
        self.ctx.clock.charge(50 * self.batch_size)
        key = self.key_fn(batch) if self.key_fn else batch.id
        self.ctx.emit(MsgKind.MINIBATCH, batch, key=key)
        self.emitted += 1


def minibatch_generator(
    name: str,
    dataset: Sequence[Any],
    batch_size: int,
    key_fn: Callable[[MiniBatch], Any] | None = None,
    passes: int | None = 1,
    rate: float | None = None,
    duration_s: float | None = None,
) -> OperatorSpec:
    """Source operator spec; wire it to a Model with ``HashShard`` routing."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    opts = dict(
        dataset=dataset,
        batch_size=batch_size,
        key_fn=key_fn,
        passes=passes,
        rate=rate,
        duration_ns=None if duration_s is None else int(duration_s * 1e9),
    )
    return OperatorSpec(name, OpKind.SOURCE, 1, factory=MiniBatchGenerator, options=opts)


def shard_edge(src: str, dst: str):
    # key comes from the generator's key_fn
    return (src, dst, HashShard())


# -- throughput ------------------------------------------------------------


@dataclass
class ThroughputReport:
    offered_rate: float
    achieved_rate: float
    latency_p50: float
    latency_p95: float
    latency_p99: float
    sustainable: bool
    segment_p99: list[float] = field(default_factory=list)
    completed: int = 0

    CSV_HEADER = ("offered_rate", "achieved_rate", "p50", "p95", "p99", "sustainable")

    def row(self) -> list:
        return [
            f"{self.offered_rate:.1f}",
            f"{self.achieved_rate:.1f}",
            f"{self.latency_p50:.0f}",
            f"{self.latency_p95:.0f}",
            f"{self.latency_p99:.0f}",
            "true" if self.sustainable else "false",
        ]


def write_throughput_csv(path, reports: Sequence[ThroughputReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ThroughputReport.CSV_HEADER)
        for r in reports:
            w.writerow(r.row())


def assess_window(
    offered_rate: float,
    completions: Sequence[tuple[int, int, int]],
    t0: int,
    window_ns: int,
    achieved_factor: float = 0.95,
    surge_factor: float = 1.5,
    segments: int = 3,
) -> ThroughputReport:
    """Summarise one trial.

    ``completions`` holds ``(done_ts, latency_ns, n_events)`` per batch. The
    run is unsustainable when fewer than ``achieved_factor`` of the offered
    events complete, or when p99 latency rises segment over segment across the
    last three quarters of the window and ends ``surge_factor`` above where
    it started.
    """
    end = t0 + window_ns
    inside = [c for c in completions if t0 <= c[0] < end]
    events = sum(c[2] for c in inside)
    achieved = events / (window_ns / 1e9)
    if offered_rate > 0:
        achieved = min(achieved, offered_rate)
    lat = np.array([c[1] for c in inside], dtype=np.float64)
    if lat.size:
        p50, p95, p99 = np.percentile(lat, [50, 95, 99])
    else:
        p50 = p95 = p99 = float("inf")

    seg_len = (window_ns * 3 // 4) // segments
    seg_start = t0 + window_ns // 4
    seg_p99 = []
    for k in range(segments):
        lo = seg_start + k * seg_len
        part = [c[1] for c in inside if lo <= c[0] < lo + seg_len]
        seg_p99.append(float(np.percentile(part, 99)) if part else float("nan"))
    growing = False
    finite = [v for v in seg_p99 if v == v]
    if len(finite) == segments:
        growing = all(b > a for a, b in zip(finite, finite[1:])) and finite[-1] >= surge_factor * finite[0]
    elif lat.size == 0 and offered_rate > 0:
        growing = True
    sustainable = (achieved >= achieved_factor * offered_rate) and not growing
    return ThroughputReport(offered_rate, achieved, float(p50), float(p95), float(p99), sustainable, seg_p99, len(inside))


def collect_completions(runtime) -> list[tuple[int, int, int]]:
    out = []
    for ctx in runtime.contexts.values():
        out.extend(getattr(ctx.vertex, "completions", ()))
    out.sort()
    return out


def run_trial(make_graph: Callable[[float | None, float], DataflowGraph], rate: float | None, window_s: float, **run_kw):
    """Run one fixed-window trial on real threads; returns (runtime, t0, window_ns)."""
    from .dataflow.runtime import run_graph

    graph = make_graph(rate, window_s)
    rt = run_graph(graph, scheduler="threads", **run_kw)
    src = next(c.vertex for c in rt.contexts.values() if c.vertex.is_source)
    deadline = time.monotonic() + window_s + 5.0
    while src.t_start is None and time.monotonic() < deadline:
        time.sleep(0.001)
    t0 = src.t_start or time.monotonic_ns()
    time.sleep(max(0.0, (t0 + int(window_s * 1e9) - time.monotonic_ns()) / 1e9))
    rt.abort()
    rt.join(timeout=30)
    return rt, t0, int(window_s * 1e9)


def estimate_capacity(make_graph, window_s: float = 10.0, **kw) -> float:
    """Achieved events/s with an unpaced source: the system's saturation rate."""
    rt, t0, wns = run_trial(make_graph, None, window_s)
    rep = assess_window(0.0, collect_completions(rt), t0, wns, **kw)
    return rep.achieved_rate


def measure_sustainable_throughput(
    make_graph: Callable[[float | None, float], DataflowGraph],
    rates: Sequence[float],
    window_s: float = 10.0,
    achieved_factor: float = 0.95,
    surge_factor: float = 1.5,
) -> list[ThroughputReport]:
    """One fixed-window trial per offered rate (ascending), each on a fresh pipeline.

    ``make_graph(rate, window_s)`` must build a graph whose source is paced at
    ``rate`` and whose operators record ``completions``.
    """
    reports = []
    for rate in rates:
        rt, t0, wns = run_trial(make_graph, rate, window_s)
        rep = assess_window(rate, collect_completions(rt), t0, wns, achieved_factor, surge_factor)
        log.info("offered %.0f/s achieved %.0f/s p99 %.2fms sustainable=%s", rate, rep.achieved_rate, rep.latency_p99 / 1e6, rep.sustainable)
        reports.append(rep)
    return reports


def capacity_from_reports(reports: Sequence[ThroughputReport]) -> float:
    ok = [r.offered_rate for r in reports if r.sustainable]
    return max(ok) if ok else 0.0
