import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from airflux.dataflow import Broadcast, Edge, Forward, HashShard, OperatorSpec, OpKind, build_graph, hash_shard
from airflux.errors import DanglingEdge, DuplicateOperatorName, GraphError, IllegalCycle
from airflux.learners import LearnerSpec, make_learner
from airflux.model import ModelOperator

import oracles


def model_spec(n=4):
    learner = make_learner(LearnerSpec("quadratic", 0.1, hyper={"dim": 3}))
    return OperatorSpec("model", OpKind.MODEL, n, factory=ModelOperator, learner=learner)


def fig1_graph():
    specs = [
        OperatorSpec("src", OpKind.SOURCE, user_fn=lambda r: []),
        OperatorSpec("map", OpKind.MAP, user_fn=str.lower),
        OperatorSpec("split", OpKind.SPLIT, user_fn=lambda x: [("udf", x)]),
        OperatorSpec("udf", OpKind.UDF, user_fn=lambda x: []),
        model_spec(4),
    ]
    edges = [
        Edge("src", "map"),
        Edge("map", "split"),
        Edge("split", "udf"),
        Edge("udf", "model", HashShard(lambda p: p.id)),
        Edge("model", "model", Broadcast()),
    ]
    return build_graph(specs, edges)


def test_fig1_topology_is_valid():
    g = fig1_graph()
    assert [op.name for op in g.operators] == ["src", "map", "split", "udf", "model"]
    assert g.has_peers("model")
    assert [e.dst for e in g.out_edges("model")] == []
    assert g.upstream_instances("model") == 1


def test_map_self_loop_is_illegal():
    specs = [OperatorSpec("m", OpKind.MAP, user_fn=str)]
    with pytest.raises(IllegalCycle):
        build_graph(specs, [Edge("m", "m")])


def test_cycle_through_map_and_model_is_illegal():
    specs = [OperatorSpec("m", OpKind.MAP, user_fn=str), model_spec(2)]
    with pytest.raises(IllegalCycle):
        build_graph(specs, [Edge("m", "model"), Edge("model", "m")])


def test_dangling_edge():
    specs = [OperatorSpec("m", OpKind.MAP, user_fn=str)]
    with pytest.raises(DanglingEdge):
        build_graph(specs, [Edge("m", "X")])


def test_duplicate_name():
    specs = [OperatorSpec("m", OpKind.MAP, user_fn=str), OperatorSpec("m", OpKind.SINK)]
    with pytest.raises(DuplicateOperatorName):
        build_graph(specs, [])


def test_bad_specs():
    with pytest.raises(GraphError):
        OperatorSpec("m", OpKind.MAP, 0)
    with pytest.raises(GraphError):
        build_graph([model_spec(2)], [Edge("model", "model", Forward())])


def test_tuple_edges_are_accepted():
    specs = [OperatorSpec("a", OpKind.SOURCE, user_fn=lambda r: []), OperatorSpec("b", OpKind.SINK)]
    g = build_graph(specs, [("a", "b")])
    assert g.out_edges("a")[0].dst == "b"


def test_shard_single_rank():
    assert hash_shard("anything", 1) == 0
    assert hash_shard(12345, 1) == 0


def test_shard_rejects_zero():
    with pytest.raises(ValueError):
        hash_shard("x", 0)


@given(st.one_of(st.text(max_size=20), st.integers(0, 10**12)), st.integers(1, 64))
def test_shard_matches_reference(key, n):
    assert hash_shard(key, n) == oracles.shard(key, n)
    assert hash_shard(key, n) == hash_shard(key, n)


def test_shard_is_pure_over_many_keys():
    rng = random.Random(7)
    pairs = [(rng.getrandbits(48), rng.randint(1, 16)) for _ in range(200_000)]
    first = [hash_shard(k, n) for k, n in pairs]
    assert first == [hash_shard(k, n) for k, n in pairs]
    assert all(0 <= r < n for r, (_, n) in zip(first, pairs))


def test_shard_balance():
    rng = random.Random(11)
    counts = [0] * 4
    for _ in range(10_000):
        counts[hash_shard(f"k{rng.getrandbits(40)}", 4)] += 1
    assert all(abs(c / 10_000 - 0.25) <= 0.05 for c in counts)
