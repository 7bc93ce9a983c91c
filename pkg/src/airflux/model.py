"""The Model operator: asynchronous train/predict with peer gradient exchange.

Each replica keeps a vector clock ``applied`` counting, per origin rank, how
many of that origin's gradients it has applied. Channels are FIFO, so the
gradients applied from any origin always form a prefix ``1..applied[origin]``
of that origin's sequence. The set of gradients a replica has applied is
therefore fully described by its clock, and the staleness of a gradient (the
size of the symmetric difference between the gradient sets of the computing
replica at computation time and the applying replica at application time)
is the L1 distance between the two clocks.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .dataflow.graph import OperatorSpec
from .dataflow.messages import Control, Message, MsgKind, Prediction, PredictRequest, register_payload
from .dataflow.vertex import Vertex
from .errors import (
    BarrierTimeout,
    MismatchedRankSets,
    NonFiniteGradient,
    OracleMismatch,
    ProtocolError,
    UnknownMessageKind,
)
from .learners.base import Delta, Learner, ParamStore, apply_delta

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradientUpdate:
    origin: int
    origin_seq: int
    origin_clock: tuple[int, ...]
    delta: Delta
    batch_id: int


register_payload(MsgKind.GRADIENT, GradientUpdate)


@dataclass(frozen=True)
class StalenessRecord:
    applier: int
    origin: int
    origin_seq: int
    staleness: int
    wall_ts: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


@dataclass
class ModelReplicaState:
    rank: int
    theta: ParamStore
    applied: list[int]
    local_seq: int = 0

    @classmethod
    def fresh(cls, rank: int, n: int, theta: ParamStore) -> "ModelReplicaState":
        return cls(rank, theta, [0] * n)

    def clock(self) -> tuple[int, ...]:
        return tuple(self.applied)


def compute_staleness(applier_clock: Sequence[int], origin_clock: Sequence[int]) -> int:
    if len(applier_clock) != len(origin_clock):
        raise MismatchedRankSets(f"clocks over {len(applier_clock)} and {len(origin_clock)} ranks")
    return sum(abs(a - b) for a, b in zip(applier_clock, origin_clock))


def calculate_gradient(state: ModelReplicaState, learner: Learner, batch) -> tuple[float, GradientUpdate]:
    loss, delta = learner.gradient(state.theta, batch)
    g = GradientUpdate(state.rank, state.local_seq + 1, state.clock(), delta, getattr(batch, "id", -1))
    return loss, g


def apply_gradient(state: ModelReplicaState, g: GradientUpdate, alpha: float) -> ModelReplicaState:
    """Apply ``g`` in place and advance the clock entry of its origin.

    Gradients from one origin must arrive in order; a repeat or a gap means a
    protocol bug and raises instead of silently corrupting the clock.
    """
    if not 0 <= g.origin < len(state.applied):
        raise MismatchedRankSets(f"origin {g.origin} outside clock of {len(state.applied)} ranks")
    if g.origin_seq != state.applied[g.origin] + 1:
        raise ProtocolError(
            f"rank {state.rank}: gradient ({g.origin}, {g.origin_seq}) but {state.applied[g.origin]} already applied"
        )
    apply_delta(state.theta, g.delta, alpha)
    state.applied[g.origin] += 1
    return state


def model_key(payload) -> Any:
    """Default shard key for traffic into a Model operator."""
    if isinstance(payload, PredictRequest):
        return payload.request_id
    return getattr(payload, "id", 0)


class ModelOperator(Vertex):
    """One replica of a trainable model.

    ``spec.learner`` provides loss/gradient; ``spec.options`` may set
    ``alpha`` (defaults to the learner's), ``init_params`` (copied),
    ``record_history`` (keep the applied-gradient log for the replay oracle),
    ``trace_digests`` (hash theta after every local step) and
    ``barrier_timeout_s``.
    """

    def __init__(self, spec: OperatorSpec, rank: int):
        super().__init__(spec, rank)
        self.learner: Learner = spec.learner
        o = spec.options
        self.alpha = float(o.get("alpha", self.learner.alpha))
        init = o.get("init_params")
        theta = init.copy() if init is not None else self.learner.init_params()
        self.n = spec.instance_count
        self.state = ModelReplicaState.fresh(rank, self.n, theta)
        self.max_grad_buffer = spec.max_grad_buffer
        self.buffer: list[GradientUpdate] = []
        self.alive = True
        self.record_history = bool(o.get("record_history", False))
        self.trace_digests = bool(o.get("trace_digests", False))
        self.barrier_timeout_s = float(o.get("barrier_timeout_s", 30.0))
        # staleness-aware step scaling would hook in here; plain SGD leaves it unset
        self.stale_alpha = o.get("stale_alpha")

        self.staleness_log: list[StalenessRecord] = []
        self.loss_log: list[tuple[int, float]] = []
        self.completions: list[tuple[int, int, int]] = []
        self.digests: list[str] = []
        self.applied_log: list[tuple[int, int]] = []
        self.compute_pos: dict[int, int] = {}
        self.apply_pos: list[int] = []
        self.predictions: list[Prediction] = []
        self.broadcasts = 0

        self.peers: list[int] = []
        self.ssp_k: int | None = None
        self.peers_done: dict[int, int] = {}
        self.peer_round: dict[int, int] = {}
        self.round = 0
        self.in_barrier = False
        self._barrier_t0 = 0.0
        self.release_clocks: list[tuple[int, tuple[int, ...]]] = []

    def bind(self, ctx) -> None:
        super().bind(ctx)
        self.peers = sorted(ctx.peers)
        self.ssp_k = ctx.mode.k if ctx.mode.kind == "ssp" else None

    @property
    def theta(self) -> ParamStore:
        return self.state.theta

    # -- dispatch ---------------------------------------------------------

    def accepts_data(self) -> bool:
        return self.alive and not self.in_barrier

    def on_message(self, msg: Message) -> None:
        self.stream_process(msg)

    def stream_process(self, msg: Message) -> bool:
        """Route one message. Returns False if it was rejected because the replica is draining."""
        kind = msg.kind
        if kind is MsgKind.CONTROL:
            self._control(msg)
            return True
        if kind is MsgKind.GRADIENT:
            self.train(msg)
            return True
        if kind in (MsgKind.MINIBATCH, MsgKind.PREDICT_REQUEST):
            if not self.alive:
                if self.ctx is not None:
                    self.ctx.reject(msg)
                return False
            if kind is MsgKind.MINIBATCH:
                self.train(msg)
            else:
                self.predict(msg)
            return True
        raise UnknownMessageKind(f"{self.address} cannot handle {kind.name}")

    # -- training ---------------------------------------------------------

    def train(self, msg: Message) -> None:
        if msg.kind is MsgKind.GRADIENT:
            self._apply(msg.payload)
            return
        batch = msg.payload
        loss, g = calculate_gradient(self.state, self.learner, batch)
        if not g.delta.is_finite():
            raise NonFiniteGradient(batch.id, self.rank)
        if self.record_history:
            self.compute_pos[g.origin_seq] = len(self.applied_log)
        self._apply(g)
        self.state.local_seq += 1
        now = self.ctx.clock.now() if self.ctx is not None else 0
        self.loss_log.append((batch.id, loss))
        self.completions.append((now, max(0, now - batch.created_ts), len(batch)))
        if self.trace_digests:
            self.digests.append(self.state.theta.digest())
        if self.peers:
            self.buffer.append(g)
            if len(self.buffer) >= self.max_grad_buffer:
                self.flush()
        if self.ssp_k is not None and self.state.local_seq % self.ssp_k == 0:
            self._enter_barrier()

    def _apply(self, g: GradientUpdate) -> None:
        staleness = compute_staleness(self.state.applied, g.origin_clock)
        pos = len(self.applied_log)
        apply_gradient(self.state, g, self.alpha)
        ts = self.ctx.clock.now() if self.ctx is not None else 0
        self.staleness_log.append(StalenessRecord(self.rank, g.origin, g.origin_seq, staleness, ts))
        if self.record_history:
            self.applied_log.append((g.origin, g.origin_seq))
            self.apply_pos.append(pos)

    def flush(self) -> None:
        """Broadcast buffered local gradients, oldest first, then clear the buffer."""
        for g in self.buffer:
            self.ctx.broadcast_peers(MsgKind.GRADIENT, g)
            self.broadcasts += 1
        self.buffer.clear()

    # -- prediction -------------------------------------------------------

    def predict(self, msg: Message) -> Prediction:
        req: PredictRequest = msg.payload
        out = self.learner.predict(self.state.theta, req.inputs)
        pred = Prediction(req.request_id, self.rank, out)
        self.predictions.append(pred)
        if self.ctx is not None and self.ctx.out_edges:
            self.ctx.emit(MsgKind.PREDICTION, pred)
        return pred

    # -- control / shutdown / SSP -----------------------------------------

    def _control(self, msg: Message) -> None:
        c: Control = msg.payload
        if c.op == "stop":
            self.stops_seen += 1
            if self.stops_seen >= self.ctx.upstream_instances:
                self.on_upstream_done()
        elif c.op == "barrier":
            self.peer_round[msg.sender.rank] = c.value
            self._try_release()
        elif c.op == "peer_done":
            p = msg.sender.rank
            if self.state.applied[p] != c.value:
                raise ProtocolError(f"rank {self.rank}: peer {p} finished at {c.value}, applied {self.state.applied[p]}")
            self.peers_done[p] = c.value
            self._try_release()
            self._maybe_finish()
        else:
            raise UnknownMessageKind(f"control op {c.op!r}")

    def on_upstream_done(self) -> None:
        self.alive = False
        if self.peers:
            self.flush()
            self.ctx.broadcast_peers(MsgKind.CONTROL, Control("peer_done", self.state.local_seq))
        self._maybe_finish()

    def _maybe_finish(self) -> None:
        if not self.alive and len(self.peers_done) == len(self.peers):
            self.finished = True
            self.ctx.stop_downstream()

    def _enter_barrier(self) -> None:
        self.flush()
        self.round += 1
        self.ctx.broadcast_peers(MsgKind.CONTROL, Control("barrier", self.round))
        self.in_barrier = True
        self._barrier_t0 = time.monotonic()
        self._try_release()

    def _try_release(self) -> None:
        if not self.in_barrier:
            return
        if all(self.peer_round.get(p, 0) >= self.round or p in self.peers_done for p in self.peers):
            self.in_barrier = False
            self.release_clocks.append((self.round, self.state.clock()))

    def check_timeouts(self) -> None:
        if self.in_barrier and time.monotonic() - self._barrier_t0 > self.barrier_timeout_s:
            raise BarrierTimeout(f"{self.address} waited {self.barrier_timeout_s}s in round {self.round}")

    def cost_ns(self, msg: Message) -> int:
        if msg.kind is MsgKind.MINIBATCH:
            return self.learner.gc_cost_ns(len(msg.payload))
        if msg.kind is MsgKind.GRADIENT:
            return self.learner.ga_cost_ns(msg.payload.delta)
        return 500


# -- staleness oracle --------------------------------------------------------


def staleness_histogram(records: Iterable[StalenessRecord], remote_only: bool = True) -> dict[int, int]:
    hist: dict[int, int] = {}
    for r in records:
        if remote_only and r.applier == r.origin:
            continue
        hist[r.staleness] = hist.get(r.staleness, 0) + 1
    return dict(sorted(hist.items()))


def replay_staleness_oracle(replicas: Mapping[int, ModelOperator]) -> tuple[int, list[str]]:
    """Recompute every staleness value from the logged gradient-ID sequences.

    For a gradient ``a`` computed by replica ``i`` and applied by ``j``, take
    the literal set of gradient IDs ``i`` had applied when it computed ``a``
    and the set ``j`` had applied just before applying ``a``; the staleness is
    the size of their symmetric difference. Needs ``record_history``.
    Returns ``(records checked, mismatch descriptions)``.
    """
    mismatches: list[str] = []
    checked = 0
    for j, rep in replicas.items():
        if not rep.record_history:
            raise ValueError(f"replica {j} did not record its history")
        for rec, pos in zip(rep.staleness_log, rep.apply_pos):
            origin = replicas[rec.origin]
            g_j = set(rep.applied_log[:pos])
            g_i = set(origin.applied_log[: origin.compute_pos[rec.origin_seq]])
            expected = len(g_i ^ g_j)
            checked += 1
            if expected != rec.staleness:
                mismatches.append(
                    f"applier {j} gradient ({rec.origin},{rec.origin_seq}): clock says {rec.staleness}, sets say {expected}"
                )
    return checked, mismatches


def verify_staleness(replicas: Mapping[int, ModelOperator]) -> int:
    checked, bad = replay_staleness_oracle(replicas)
    if bad:
        raise OracleMismatch(f"{len(bad)} of {checked} staleness records disagree; first: {bad[0]}")
    return checked
