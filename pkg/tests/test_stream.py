import csv
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from airflux.dataflow import Edge, OperatorSpec, OpKind, build_graph, run_graph
from airflux.dataflow.channels import VirtualClock
from airflux.errors import EmptyDataset
from airflux.stream import (
    Event,
    ThroughputReport,
    assess_window,
    capacity_from_reports,
    minibatch_generator,
    replay_dataset,
    tumble,
    write_throughput_csv,
)


def events(n):
    return [Event(f"e{i}", i) for i in range(1, n + 1)]


def test_tumble_definition():
    bs = list(tumble(events(7), 3))
    assert [b.pairs for b in bs] == [("e1", "e2", "e3"), ("e4", "e5", "e6")]
    assert [b.id for b in bs] == [1, 2]
    assert [b.created_ts for b in bs] == [3, 6]


def test_tumble_size_one():
    assert [b.pairs for b in tumble(events(3), 1)] == [("e1",), ("e2",), ("e3",)]


def test_tumble_rejects_zero():
    with pytest.raises(ValueError):
        list(tumble(events(3), 0))


@given(st.integers(0, 200), st.integers(1, 17))
def test_tumble_counts(n, b):
    bs = list(tumble(events(n), b))
    assert len(bs) == n // b
    assert [x.id for x in bs] == list(range(1, n // b + 1))
    flat = [p for x in bs for p in x.pairs]
    assert flat == [f"e{i}" for i in range(1, len(flat) + 1)]


def test_replay_two_passes():
    ev = list(replay_dataset(list("abcde"), passes=2))
    assert [e.payload for e in ev] == list("abcde") * 2
    assert all(b.ts > a.ts for a, b in zip(ev, ev[1:]))


def test_replay_one_pass_is_iteration():
    data = [3, 1, 4, 1, 5]
    assert [e.payload for e in replay_dataset(data)] == data


def test_replay_empty():
    with pytest.raises(EmptyDataset):
        list(replay_dataset([]))


def test_replay_unbounded_is_lazy():
    it = replay_dataset([1, 2], passes=None)
    assert [next(it).payload for _ in range(7)] == [1, 2, 1, 2, 1, 2, 1]


def test_paced_virtual_timestamps():
    clock = VirtualClock()
    ev = list(replay_dataset(range(10), passes=None, rate=1000, clock=clock, duration_ns=10**9))
    assert len(ev) == 1000
    assert ev[1].ts - ev[0].ts == 1_000_000


def test_paced_wall_clock():
    t = time.monotonic()
    n = sum(1 for _ in replay_dataset(range(10), passes=None, rate=1000, duration_ns=10**9))
    elapsed = time.monotonic() - t
    assert abs(n - 1000) <= 50
    assert 0.9 <= elapsed <= 1.3


def _gen_graph(n_events, batch, n_ranks=1):
    src = minibatch_generator("gen", list(range(n_events)), batch)
    sink = OperatorSpec("sink", OpKind.SINK, n_ranks)
    from airflux.dataflow import HashShard

    return build_graph([src, sink], [Edge("gen", "sink", HashShard())])


def test_generator_emits_full_batches():
    rt = run_graph(_gen_graph(8, 4), scheduler="replay").join()
    items = rt.vertices("sink")[0].items
    assert [p.pairs for _, p in items] == [(0, 1, 2, 3), (4, 5, 6, 7)]


def test_generator_single_rank_gets_everything():
    rt = run_graph(_gen_graph(30, 3), scheduler="replay").join()
    assert len(rt.vertices("sink")[0].items) == 10


def test_generator_shards_by_batch_id():
    from airflux.dataflow import hash_shard

    rt = run_graph(_gen_graph(40, 1, n_ranks=4), scheduler="replay").join()
    for r, v in enumerate(rt.vertices("sink")):
        assert all(hash_shard(p.id, 4) == r for _, p in v.items)


def test_generator_rejects_empty():
    with pytest.raises(EmptyDataset):
        minibatch_generator("gen", [], 4)


# -- sustainability ----------------------------------------------------------

S = 10**9


def steady(rate_per_s, latency_ns, window=S, batch=10):
    step = S * batch // rate_per_s
    return [(t, latency_ns, batch) for t in range(0, window, step)]


def test_flat_latency_is_sustainable():
    rep = assess_window(1000, steady(1000, 5_000), 0, S)
    assert rep.sustainable
    assert rep.achieved_rate == pytest.approx(1000, rel=0.02)
    assert rep.latency_p50 <= rep.latency_p95 <= rep.latency_p99


def test_growing_latency_is_unsustainable():
    comps = [(t, 1_000 + t // 10, 10) for t in range(0, S, S // 100)]
    rep = assess_window(1000, comps, 0, S)
    assert not rep.sustainable
    assert rep.segment_p99 == sorted(rep.segment_p99)


def test_falling_behind_is_unsustainable():
    rep = assess_window(10_000, steady(1000, 5_000), 0, S)
    assert not rep.sustainable
    assert rep.achieved_rate <= rep.offered_rate


def test_noisy_flat_latency_stays_sustainable():
    # small upward wiggle across segments is not a surge
    comps = [(t, 5_000 + (t * 3 // S) * 100, 10) for t in range(0, S, S // 200)]
    assert assess_window(2000, comps, 0, S).sustainable


def test_capacity_is_max_sustainable():
    reps = [
        ThroughputReport(100, 100, 1, 1, 1, True),
        ThroughputReport(200, 200, 1, 1, 1, True),
        ThroughputReport(400, 250, 1, 1, 1, False),
    ]
    assert capacity_from_reports(reps) == 200


def test_csv_schema(tmp_path):
    p = tmp_path / "t.csv"
    write_throughput_csv(p, [ThroughputReport(100.0, 99.0, 1, 2, 3, True)])
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["offered_rate", "achieved_rate", "p50", "p95", "p99", "sustainable"]
    assert rows[1] == ["100.0", "99.0", "1", "2", "3", "true"]
