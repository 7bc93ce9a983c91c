import itertools
import threading
import time

import pytest

from airflux.dataflow import (
    Address,
    Broadcast,
    Channel,
    Control,
    Edge,
    Forward,
    Inbox,
    Message,
    MsgKind,
    OperatorSpec,
    OpKind,
    broadcast_to_peers,
    build_graph,
    run_graph,
    send,
)
from airflux.errors import ChannelClosed, ConfigError, Deadlock, ProtocolError, SpawnFailure, UnknownMessageKind

A, B, C = Address("a", 0), Address("b", 0), Address("c", 0)


def test_fifo_two_sends():
    box = Inbox(B)
    ch = Channel(A, B, box)
    send(ch, MsgKind.RECORD, "x")
    send(ch, MsgKind.RECORD, "y")
    got = [box.take(timeout=0)[0] for _ in range(2)]
    assert [m.seq for m in got] == [1, 2]
    assert [m.payload for m in got] == ["x", "y"]


def test_send_after_shutdown():
    box = Inbox(B)
    ch = Channel(A, B, box)
    box.close()
    with pytest.raises(ChannelClosed):
        send(ch, MsgKind.RECORD, 1)


def test_gap_is_a_protocol_error():
    box = Inbox(B)
    with pytest.raises(ProtocolError):
        box.put(Message(MsgKind.RECORD, A, 2, "late"), urgent=False)


def test_payload_must_match_kind():
    with pytest.raises(TypeError):
        Message(MsgKind.CONTROL, A, 1, "not a control")


def test_priority_lane_first():
    box = Inbox(C)
    send(Channel(A, C, box), MsgKind.RECORD, "data")
    send(Channel(B, C, box, urgent=True), MsgKind.CONTROL, Control("barrier", 1))
    assert box.take(timeout=0)[0].kind is MsgKind.CONTROL
    assert box.take(timeout=0)[0].payload == "data"


def test_full_inbox_blocks_producer():
    box = Inbox(B, capacity=2)
    ch = Channel(A, B, box)
    send(ch, MsgKind.RECORD, 1)
    send(ch, MsgKind.RECORD, 2)
    with pytest.raises(TimeoutError):
        box.put(Message(MsgKind.RECORD, A, 3, 3), urgent=False, timeout=0.05)
    done = threading.Event()

    def producer():
        box.put(Message(MsgKind.RECORD, A, 3, 3), urgent=False)
        done.set()

    t = threading.Thread(target=producer)
    t.start()
    assert not done.wait(0.1)
    box.take(timeout=0)
    assert done.wait(2)
    t.join()


def _peers(n, buffered=False):
    boxes = {r: Inbox(Address("model", r)) for r in range(n)}
    chans = {
        s: {r: Channel(Address("model", s), Address("model", r), boxes[r], urgent=True, buffered=buffered) for r in range(n) if r != s}
        for s in range(n)
    }
    return boxes, chans


def test_broadcast_all_but_self():
    boxes, chans = _peers(4)
    reached = broadcast_to_peers(MsgKind.CONTROL, Control("barrier", 1), 2, chans[2])
    assert reached == [0, 1, 3]
    assert [len(boxes[r]) for r in range(4)] == [1, 1, 0, 1]


def test_broadcast_single_rank_reaches_nobody():
    _, chans = _peers(1)
    assert broadcast_to_peers(MsgKind.CONTROL, Control("barrier", 1), 0, chans[0]) == []


def test_broadcast_rejects_data():
    _, chans = _peers(2)
    with pytest.raises(ValueError):
        broadcast_to_peers(MsgKind.RECORD, 1, 0, chans[0])


def pipeline(items, n_sinks=1, fn=lambda x: x * 10):
    make = items if callable(items) else (lambda r: list(items))
    specs = [
        OperatorSpec("src", OpKind.SOURCE, user_fn=make),
        OperatorSpec("map", OpKind.MAP, user_fn=fn),
        OperatorSpec("sink", OpKind.SINK, n_sinks),
    ]
    edges = [Edge("src", "map"), Edge("map", "sink", Broadcast() if n_sinks > 1 else Forward())]
    return build_graph(specs, edges)


@pytest.mark.parametrize("scheduler", ["threads", "replay"])
def test_drain_and_conservation(scheduler):
    rt = run_graph(pipeline(range(50)), scheduler=scheduler, seed=3).join(timeout=10)
    sink = rt.vertices("sink")[0]
    assert [p for _, p in sink.items] == [10 * i for i in range(50)]
    st = rt.stats()
    assert st.sent == st.received + st.dropped
    assert st.dropped == 0
    # 50 records + 1 stop on each of the two edges
    assert st.per_operator["map"]["received"] == 51


def test_stop_halts_sources():
    rt = run_graph(pipeline(lambda r: itertools.count()), scheduler="threads")
    time.sleep(0.05)
    rt.stop()
    rt.join(timeout=10)
    st = rt.stats()
    assert st.sent == st.received + st.dropped


def test_replay_is_deterministic():
    a = run_graph(pipeline(range(20), n_sinks=3), scheduler="replay", seed=9).join()
    b = run_graph(pipeline(range(20), n_sinks=3), scheduler="replay", seed=9).join()
    c = run_graph(pipeline(range(20), n_sinks=3), scheduler="replay", seed=10).join()
    assert a.trace == b.trace
    assert a.trace != c.trace


def test_interleavings_of_two_senders():
    # a sends two records to c, b sends one; every order that keeps a's FIFO appears
    specs = [
        OperatorSpec("a", OpKind.SOURCE, user_fn=lambda r: ["a1", "a2"]),
        OperatorSpec("b", OpKind.SOURCE, user_fn=lambda r: ["b1"]),
        OperatorSpec("c", OpKind.SINK),
    ]
    g = build_graph(specs, [Edge("a", "c"), Edge("b", "c")])
    orders = set()
    for seed in range(60):
        rt = run_graph(g, scheduler="replay", seed=seed).join()
        got = tuple(p for k, p in rt.vertices("c")[0].items)
        assert got.index("a1") < got.index("a2")
        orders.add(got)
    assert orders == {("a1", "a2", "b1"), ("a1", "b1", "a2"), ("b1", "a1", "a2")}


def test_two_concurrent_broadcasters():
    from airflux.learners import LearnerSpec, make_learner
    from airflux.pipeline import replicas, train

    learner = make_learner(LearnerSpec("linear", 0.25, hyper={"dim": 2}))
    data = [(0, 0)] * 6
    for seed in range(10):
        rt = train(learner, data, n_ranks=3, batch_size=1, seed=seed, record_history=True)
        for rep in replicas(rt):
            per_origin = {}
            for origin, seq in rep.applied_log:
                per_origin.setdefault(origin, []).append(seq)
            for seqs in per_origin.values():
                assert seqs == list(range(1, len(seqs) + 1))


def test_unknown_kind_fails_the_run():
    specs = [
        OperatorSpec("src", OpKind.SOURCE, user_fn=lambda r: [1]),
        OperatorSpec("udf", OpKind.UDF, user_fn=lambda x: [(MsgKind.PREDICTION, None)]),
        OperatorSpec("map", OpKind.MAP, user_fn=str),
    ]
    g = build_graph(specs, [Edge("src", "udf"), Edge("udf", "map")])
    with pytest.raises((UnknownMessageKind, TypeError)):
        run_graph(g, scheduler="replay").join()


def test_spawn_failure(monkeypatch):
    def boom(self):
        raise RuntimeError("can't start new thread")

    monkeypatch.setattr(threading.Thread, "start", boom)
    with pytest.raises(SpawnFailure):
        run_graph(pipeline([1]), scheduler="threads")


def test_bad_scheduler_and_script():
    with pytest.raises(ConfigError):
        run_graph(pipeline([1]), scheduler="mpi")
    with pytest.raises(Deadlock):
        run_graph(pipeline([1]), scheduler="replay", script=[("step", ("sink", 0))]).join()
