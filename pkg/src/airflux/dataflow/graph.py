"""Logical dataflow graphs: operator specs, routed edges and validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

from ..errors import DanglingEdge, DuplicateOperatorName, GraphError, IllegalCycle


class OpKind(str, Enum):
    SOURCE = "source"
    MAP = "map"
    SPLIT = "split"
    UDF = "udf"
    MODEL = "model"
    SINK = "sink"


@dataclass(frozen=True)
class Forward:
    """Instance ``i`` of the producer feeds instance ``i mod n`` of the consumer."""


@dataclass(frozen=True)
class Broadcast:
    """Every message goes to every consumer instance."""


@dataclass(frozen=True)
class HashShard:
    """Route by ``hash_shard(key_fn(payload), n)``."""

    key_fn: Callable[[Any], bytes] | None = None


Routing = Forward | Broadcast | HashShard


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    kind: OpKind
    instance_count: int = 1
    user_fn: Callable | None = None
    # builds the runtime vertex for one rank; defaults per kind otherwise
    factory: Callable[["OperatorSpec", int], Any] | None = None
    learner: Any = None
    max_grad_buffer: int = 1
    options: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.instance_count < 1:
            raise GraphError(f"operator {self.name!r}: instance_count must be >= 1")
        if self.kind is OpKind.MODEL and self.max_grad_buffer < 1:
            raise GraphError(f"operator {self.name!r}: max_grad_buffer must be >= 1")


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    routing: Routing = Forward()


class DataflowGraph:
    """A validated operator graph. Build it with :func:`build_graph`."""

    def __init__(self, operators: Sequence[OperatorSpec], edges: Sequence[Edge]):
        self.operators = list(operators)
        self.edges = list(edges)
        self._by_name = {op.name: op for op in self.operators}

    def operator(self, name: str) -> OperatorSpec:
        return self._by_name[name]

    def index_of(self, name: str) -> int:
        return [op.name for op in self.operators].index(name)

    def is_peer_edge(self, edge: Edge) -> bool:
        return edge.src == edge.dst and self._by_name[edge.src].kind is OpKind.MODEL

    def out_edges(self, name: str) -> list[Edge]:
        return [e for e in self.edges if e.src == name and not self.is_peer_edge(e)]

    def in_edges(self, name: str) -> list[Edge]:
        return [e for e in self.edges if e.dst == name and not self.is_peer_edge(e)]

    def has_peers(self, name: str) -> bool:
        return any(self.is_peer_edge(e) for e in self.edges if e.src == name)

    def upstream_instances(self, name: str) -> int:
        return sum(self._by_name[e.src].instance_count for e in self.in_edges(name))

    def models(self) -> list[OperatorSpec]:
        return [op for op in self.operators if op.kind is OpKind.MODEL]

    def __repr__(self) -> str:
        ops = ", ".join(f"{o.name}:{o.kind.value}x{o.instance_count}" for o in self.operators)
        return f"DataflowGraph({ops}; {len(self.edges)} edges)"


def _check_acyclic(names: list[str], edges: list[tuple[str, str]]) -> None:
    adj: dict[str, list[str]] = {n: [] for n in names}
    for a, b in edges:
        adj[a].append(b)
    white, grey, black = 0, 1, 2
    colour = dict.fromkeys(names, white)

    def visit(n: str, path: list[str]) -> None:
        colour[n] = grey
        for m in adj[n]:
            if colour[m] == grey:
                cycle = path[path.index(m):] + [n, m] if m in path else [n, m]
                raise IllegalCycle("cycle through non-Model operator: " + " -> ".join(dict.fromkeys(cycle)))
            if colour[m] == white:
                visit(m, path + [n])
        colour[n] = black

    for n in names:
        if colour[n] == white:
            visit(n, [])


def build_graph(specs: Sequence[OperatorSpec], edges: Sequence[Edge | tuple]) -> DataflowGraph:
    """Validate operators and edges and return the graph.

    Cycles are only legal when every edge on them joins two Model operators;
    the usual case is a Model's self-edge carrying gradient broadcasts.
    """
    names = [s.name for s in specs]
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise DuplicateOperatorName(n)
        seen.add(n)

    norm: list[Edge] = []
    for e in edges:
        if not isinstance(e, Edge):
            e = Edge(*e)
        for end in (e.src, e.dst):
            if end not in seen:
                raise DanglingEdge(f"edge {e.src!r} -> {e.dst!r} references undeclared operator {end!r}")
        norm.append(e)

    kinds = {s.name: s.kind for s in specs}
    data_edges = [
        (e.src, e.dst)
        for e in norm
        if not (kinds[e.src] is OpKind.MODEL and kinds[e.dst] is OpKind.MODEL)
    ]
    _check_acyclic(names, data_edges)
    for e in norm:
        if e.src == e.dst and kinds[e.src] is OpKind.MODEL and not isinstance(e.routing, Broadcast):
            raise GraphError(f"gradient exchange edge on {e.src!r} must use Broadcast routing")
        if kinds[e.dst] is OpKind.SOURCE:
            raise GraphError(f"source {e.dst!r} cannot have inputs")
    return DataflowGraph(specs, norm)
