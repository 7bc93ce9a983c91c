"""Standard training topology: MiniBatchGenerator -> Model(n) with peer exchange."""

from __future__ import annotations

from typing import Any, Sequence

from .dataflow.graph import Broadcast, DataflowGraph, Edge, HashShard, OperatorSpec, OpKind, build_graph
from .dataflow.runtime import Runtime, run_graph
from .learners.base import Learner, ParamStore
from .model import ModelOperator, model_key
from .stream import minibatch_generator

SOURCE = "source"
MODEL = "model"


def training_graph(
    learner: Learner,
    dataset: Sequence[Any],
    n_ranks: int = 1,
    batch_size: int = 32,
    max_grad_buffer: int = 1,
    alpha: float | None = None,
    passes: int | None = 1,
    rate: float | None = None,
    duration_s: float | None = None,
    init_params: ParamStore | None = None,
    record_history: bool = False,
    trace_digests: bool = False,
    barrier_timeout_s: float = 30.0,
) -> DataflowGraph:
    src = minibatch_generator(SOURCE, dataset, batch_size, learner.shard_key, passes, rate, duration_s)
    opts = {
        "alpha": learner.alpha if alpha is None else alpha,
        "record_history": record_history,
        "trace_digests": trace_digests,
        "barrier_timeout_s": barrier_timeout_s,
    }
    if init_params is not None:
        opts["init_params"] = init_params
    model = OperatorSpec(
        MODEL,
        OpKind.MODEL,
        n_ranks,
        factory=ModelOperator,
        learner=learner,
        max_grad_buffer=max_grad_buffer,
        options=opts,
    )
    edges = [Edge(SOURCE, MODEL, HashShard(model_key))]
    if n_ranks > 1:
        edges.append(Edge(MODEL, MODEL, Broadcast()))
    return build_graph([src, model], edges)


def train(learner: Learner, dataset, mode="asgd", scheduler="replay", seed=0, **graph_kw) -> Runtime:
    """Build, run to completion, and return the finished runtime."""
    run_kw = {k: graph_kw.pop(k) for k in ("queue_capacity", "script", "horizon_ns", "policy") if k in graph_kw}
    graph = training_graph(learner, dataset, **graph_kw)
    return run_graph(graph, mode, scheduler=scheduler, seed=seed, **run_kw).join()


def replicas(rt: Runtime) -> list[ModelOperator]:
    return rt.vertices(MODEL)
