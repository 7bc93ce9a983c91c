"""Experiment drivers behind the CLI subcommands.

Each driver takes a :class:`RunConfig`, runs the engine and returns plain
data; writing files is left to :mod:`airflux.cli`.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .config import RunConfig
from .dataflow.graph import HashShard, OperatorSpec, OpKind, build_graph, Edge, Broadcast
from .dataflow.runtime import Runtime, run_graph
from .dataflow.sharding import hash_shard
from .datasets import gaussian_blobs, load_csv_dataset, load_text_corpus, topic_corpus
from .drift import DriftEngineConfig, DriftReport, DriftScenario, control_noise_floor, pretrain, rotate_topics, run_drift_experiment
from .learners.base import Learner, LearnerSpec, ParamStore, make_learner, sequential_sgd
from .learners.word2vec import Vocabulary, make_pairs_word2vec
from .model import ModelOperator, StalenessRecord, replay_staleness_oracle, staleness_histogram
from .pipeline import MODEL, SOURCE, replicas, train, training_graph
from .stream import (
    MiniBatch,
    ThroughputReport,
    assess_window,
    capacity_from_reports,
    collect_completions,
    measure_sustainable_throughput,
    minibatch_generator,
    tumble,
    replay_dataset,
)

log = logging.getLogger(__name__)


class InsufficientCores(UserWarning):
    pass


# -- building blocks ------------------------------------------------------


def build_learner(cfg: RunConfig, vocab_size: int | None = None) -> Learner:
    hyper: dict = {"dim": cfg.dim}
    if cfg.learner == "word2vec":
        hyper["vocab_size"] = vocab_size or cfg.vocab_size
    elif cfg.learner == "dense":
        hyper.update(features=cfg.features, classes=cfg.classes, hidden=cfg.hidden)
    return make_learner(LearnerSpec(cfg.learner, cfg.alpha, cfg.seed, hyper))


def build_dataset(cfg: RunConfig) -> tuple[Learner, list]:
    """Learner plus its training pairs, both fixed by the config's seed."""
    seed = cfg.seed
    if cfg.learner == "word2vec":
        if cfg.data_file:
            text = load_text_corpus(cfg.data_file)
            vocab = Vocabulary.build(t for s in text for t in s)
            sents = [vocab.encode(s) for s in text]
            V, counts = len(vocab), vocab.counts
        else:
            sents = topic_corpus(cfg.vocab_size, cfg.n_topics, cfg.n_sentences, cfg.sentence_len, seed)
            V, counts = cfg.vocab_size, None
        pairs = make_pairs_word2vec(sents, cfg.window, cfg.negatives, seed, counts=counts, vocab_size=V)
        learner = build_learner(cfg, V)
    elif cfg.learner == "dense":
        if cfg.data_file:
            pairs = load_csv_dataset(cfg.data_file)
            cfg = replace(cfg, features=int(pairs[0].x.size), classes=max(int(p.y) for p in pairs) + 1)
        else:
            pairs = gaussian_blobs(cfg.examples, cfg.features, cfg.classes, seed, spread=cfg.spread)
        learner = build_learner(cfg)
    else:
        # analytic learners ignore the batch contents
        pairs = [(np.zeros(1, dtype=np.float32), 0)] * cfg.examples
        learner = build_learner(cfg)
    if cfg.shuffle:
        order = np.random.default_rng(seed).permutation(len(pairs))
        pairs = [pairs[i] for i in order]
    return learner, pairs


def run_config(cfg: RunConfig, record_history: bool = False, **kw) -> Runtime:
    learner, pairs = build_dataset(cfg)
    return train(
        learner,
        pairs,
        mode=cfg.mode,
        scheduler=cfg.scheduler,
        seed=cfg.seed,
        n_ranks=cfg.n_ranks,
        batch_size=cfg.batch_size,
        max_grad_buffer=cfg.max_grad_buffer,
        alpha=cfg.effective_alpha,
        passes=cfg.passes,
        record_history=record_history,
        queue_capacity=cfg.queue_capacity,
        **kw,
    )


def loss_curve(rt: Runtime) -> list[tuple[int, float]]:
    """Per-batch loss at the computing replica, merged by batch id."""
    return sorted((b, l) for r in replicas(rt) for b, l in r.loss_log)


def final_loss(curve: Sequence[tuple[int, float]], last: int = 100) -> float:
    return float(np.mean([l for _, l in curve[-last:]]))


@dataclass
class RunMetrics:
    loss: list[tuple[int, float]]
    staleness_hist: dict[int, int]
    remote_applications: int
    per_rank_examples: list[int]
    wall_ns: int
    digests: list[str]

    @property
    def per_rank_throughput(self) -> list[float]:
        secs = max(self.wall_ns, 1) / 1e9
        return [n / secs for n in self.per_rank_examples]

    def to_dict(self) -> dict:
        return {
            "batches": len(self.loss),
            "final_loss": final_loss(self.loss) if self.loss else None,
            "staleness_histogram": {str(k): v for k, v in self.staleness_hist.items()},
            "remote_applications": self.remote_applications,
            "per_rank_examples": self.per_rank_examples,
            "per_rank_throughput": [round(x, 3) for x in self.per_rank_throughput],
            "wall_ns": self.wall_ns,
            "theta_digests": self.digests,
        }


def collect_metrics(rt: Runtime) -> RunMetrics:
    reps = replicas(rt)
    records = [rec for r in reps for rec in r.staleness_log]
    hist = staleness_histogram(records)
    remote = sum(1 for rec in records if rec.applier != rec.origin)
    examples = [sum(c[2] for c in r.completions) for r in reps]
    return RunMetrics(loss_curve(rt), hist, remote, examples, rt.wall_ns, [r.theta.digest() for r in reps])


# -- converge ---------------------------------------------------------------


@dataclass
class ConvergeResult:
    curves: dict[int, list[tuple[int, float]]]
    reference: list[float]
    single_rank_matches: bool

    def final(self, n: int, last: int = 100) -> float:
        return final_loss(self.curves[n], last)

    def relative_to_single(self, n: int, last: int = 100) -> float:
        base = self.final(self.base_rank, last)
        return abs(self.final(n, last) - base) / base

    @property
    def base_rank(self) -> int:
        return min(self.curves)


def reference_sgd(cfg: RunConfig) -> tuple[list[float], ParamStore]:
    """Standalone sequential SGD over the batch sequence the engine would see."""
    learner, pairs = build_dataset(cfg)
    params = learner.init_params()
    batches = [b.pairs for b in tumble(replay_dataset(pairs, cfg.passes), cfg.batch_size)]
    losses = sequential_sgd(learner, params, batches, cfg.alpha)
    return losses, params


def converge(cfg: RunConfig) -> ConvergeResult:
    curves = {}
    for n in cfg.ranks:
        curves[n] = loss_curve(run_config(replace(cfg, n_ranks=n)))
    ref, _ = reference_sgd(replace(cfg, alpha_scaling=False))
    one = curves.get(1)
    matches = one is not None and [l for _, l in one] == ref
    return ConvergeResult(curves, ref, matches)


@dataclass
class ScalingResult:
    single: list[float]
    off: list[float]
    on: list[float]

    @property
    def noise(self) -> float:
        return float(np.std(self.single, ddof=1)) if len(self.single) > 1 else 0.0

    @property
    def gap_off(self) -> float:
        return abs(float(np.mean(self.off)) - float(np.mean(self.single)))

    @property
    def gap_on(self) -> float:
        return abs(float(np.mean(self.on)) - float(np.mean(self.single)))


def dense_scaling(cfg: RunConfig, n: int = 4, seeds: Sequence[int] = (0, 1, 2), last: int = 100) -> ScalingResult:
    """Final loss for n=1, and for n ranks with and without alpha scaling, over several seeds."""
    single, off, on = [], [], []
    for s in seeds:
        base = replace(cfg, seed=s, learner="dense")
        single.append(final_loss(loss_curve(run_config(replace(base, n_ranks=1, alpha_scaling=False))), last))
        off.append(final_loss(loss_curve(run_config(replace(base, n_ranks=n, alpha_scaling=False))), last))
        on.append(final_loss(loss_curve(run_config(replace(base, n_ranks=n, alpha_scaling=True))), last))
    return ScalingResult(single, off, on)


# -- speedup ------------------------------------------------------------------


@dataclass
class SpeedupRow:
    n_ranks: int
    batch_size: int
    examples_per_s: float
    efficiency: float


def check_cores(needed: int) -> bool:
    have = os.cpu_count() or 1
    if have < needed:
        warnings.warn(f"{needed} ranks requested but only {have} cores available", InsufficientCores, stacklevel=2)
        return False
    return True


def _timing_kw(cfg: RunConfig) -> dict:
    # virtual-time measurements need actions executed in timestamp order
    return {"policy": "timed"} if cfg.scheduler == "replay" else {}


def examples_per_second(cfg: RunConfig, n: int, batch_size: int) -> float:
    """Training throughput over a fixed per-run batch budget."""
    learner, pairs = build_dataset(cfg)
    need = cfg.speedup_batches * batch_size
    if len(pairs) < need:
        pairs = (pairs * (need // len(pairs) + 1))[:need]
    else:
        pairs = pairs[:need]
    # one BLAS thread per replica, so ranks and not the math library provide the parallelism
    with threadpool_limits(limits=1):
        rt = train(
            learner,
            pairs,
            mode=cfg.mode,
            scheduler=cfg.scheduler,
            seed=cfg.seed,
            n_ranks=n,
            batch_size=batch_size,
            max_grad_buffer=cfg.max_grad_buffer,
            alpha=cfg.alpha * n if cfg.alpha_scaling else cfg.alpha,
            **_timing_kw(cfg),
        )
    done = sum(c[2] for r in replicas(rt) for c in r.completions)
    return done / (max(rt.wall_ns, 1) / 1e9)


def speedup(cfg: RunConfig, ranks: Sequence[int] | None = None, batch_sizes: Sequence[int] | None = None) -> list[SpeedupRow]:
    ranks = sorted(set(ranks or cfg.ranks) | {1})
    batch_sizes = list(batch_sizes or cfg.batch_sizes)
    if cfg.scheduler == "threads":
        check_cores(max(ranks))
    rows = []
    for b in batch_sizes:
        base = None
        for n in ranks:
            eps = examples_per_second(cfg, n, b)
            if n == 1:
                base = eps
            rows.append(SpeedupRow(n, b, eps, eps / (n * base)))
    return rows


# -- staleness ---------------------------------------------------------------


@dataclass
class StalenessTrace:
    records: list[StalenessRecord]
    histogram: dict[int, int]
    checked: int
    mismatches: list[str]


def staleness_trace(cfg: RunConfig, **run_kw) -> StalenessTrace:
    rt = run_config(cfg, record_history=True, **run_kw)
    reps = replicas(rt)
    records = [rec for r in reps for rec in r.staleness_log]
    records.sort(key=lambda r: (r.applier, r.wall_ts, r.origin, r.origin_seq))
    checked, bad = replay_staleness_oracle(dict(enumerate(reps)))
    return StalenessTrace(records, staleness_histogram(records), checked, bad)


def key_for_rank(rank: int, n: int, start: int = 0) -> int:
    """Smallest integer key >= ``start`` that shards to ``rank``."""
    k = start
    while hash_shard(k, n) != rank:
        k += 1
    return k


def scripted_three_rank_run():
    """A three-replica staleness scenario, driven step by step.

    Four batches go to ranks 0, 1, 2, 0. Each replica computes its batch
    before any gradient reaches it, except that rank 0 computes its second
    batch after applying nothing remote. Rank 0 then applies rank 1's and
    rank 2's gradients, in that order. Returns the finished runtime.
    """
    n = 3
    plan = {1: 0, 2: 1, 3: 2, 4: 0}
    keys = {bid: key_for_rank(r, n) for bid, r in plan.items()}
    spec = LearnerSpec("linear", 0.25, 0, {"dim": 4})
    learner = make_learner(spec)
    data = [(np.zeros(1, dtype=np.float32), 0)] * 4
    src = minibatch_generator(SOURCE, data, 1, key_fn=lambda b: keys[b.id])
    model = OperatorSpec(MODEL, OpKind.MODEL, n, factory=ModelOperator, learner=learner, max_grad_buffer=1,
                         options={"record_history": True})
    graph = build_graph([src, model], [Edge(SOURCE, MODEL, HashShard(None)), Edge(MODEL, MODEL, Broadcast())])
    S, M = (SOURCE, 0), lambda r: (MODEL, r)
    script = []
    for bid, r in plan.items():
        script += [("step", S), ("deliver", S, M(r)), ("step", M(r))]
    script += [
        ("deliver", M(1), M(0)),
        ("step", M(0)),
        ("deliver", M(2), M(0)),
        ("step", M(0)),
    ]
    return run_graph(graph, "asgd", scheduler="replay", seed=0, script=script).join()


# -- throughput ---------------------------------------------------------------


def throughput_graph_factory(cfg: RunConfig):
    learner, pairs = build_dataset(cfg)

    def make(rate, window_s):
        return training_graph(
            learner,
            pairs,
            n_ranks=cfg.n_ranks,
            batch_size=cfg.batch_size,
            max_grad_buffer=cfg.max_grad_buffer,
            alpha=cfg.effective_alpha,
            passes=None,
            rate=rate,
            duration_s=window_s,
        )

    return make


def _virtual_trial(make, cfg: RunConfig, rate, window_s):
    wns = int(window_s * 1e9)
    rt = run_graph(make(rate, window_s), cfg.mode, scheduler="replay", seed=cfg.seed, horizon_ns=wns, policy="timed").join()
    return rt, 0, wns


def virtual_capacity(cfg: RunConfig) -> float:
    make = throughput_graph_factory(cfg)
    rt, t0, wns = _virtual_trial(make, cfg, None, cfg.virtual_window_s)
    return assess_window(0.0, collect_completions(rt), t0, wns).achieved_rate


def throughput(cfg: RunConfig, rates: Sequence[float] | None = None) -> tuple[float, list[ThroughputReport], float]:
    """Returns (capacity estimate, one report per offered rate, sustainable capacity).

    With no explicit rates the offered rates are ``rate_factors`` times the
    capacity estimate. The replay scheduler measures virtual time and is
    deterministic; the thread scheduler measures wall-clock time.
    """
    make = throughput_graph_factory(cfg)
    if cfg.scheduler == "replay":
        cap = virtual_capacity(cfg)
    else:
        from .stream import estimate_capacity

        cap = estimate_capacity(make, cfg.window_s)
    rates = list(rates or cfg.rates) or [round(f * cap, 1) for f in cfg.rate_factors]
    rates = sorted(rates)
    if cfg.scheduler == "replay":
        reports = []
        for r in rates:
            rt, t0, wns = _virtual_trial(make, cfg, r, cfg.virtual_window_s)
            reports.append(assess_window(r, collect_completions(rt), t0, wns))
    else:
        reports = measure_sustainable_throughput(make, rates, cfg.window_s)
    return cap, reports, capacity_from_reports(reports)


# -- drift ---------------------------------------------------------------------


def drift_scenario(cfg: RunConfig) -> DriftScenario:
    shifted = range(0, cfg.drift_vocab_size, cfg.shift_every) if cfg.shift_every > 0 else []
    return DriftScenario(
        vocab_size=cfg.drift_vocab_size,
        n_topics=cfg.drift_topics,
        n_sentences=cfg.drift_sentences,
        sentence_len=cfg.sentence_len,
        drift_time=cfg.drift_time,
        shift=rotate_topics(shifted, cfg.drift_topics),
        corpus_seed=cfg.seed,
    )


def drift_engine(cfg: RunConfig) -> DriftEngineConfig:
    return DriftEngineConfig(
        dim=cfg.dim,
        alpha=cfg.alpha,
        window=cfg.window,
        negatives=cfg.negatives,
        batch_size=cfg.batch_size,
        n_ranks=cfg.n_ranks,
        mode=cfg.mode,
        scheduler=cfg.scheduler,
        pre_passes=cfg.pre_passes,
        post_passes=cfg.post_passes,
        seed=cfg.seed,
    )


@dataclass
class DriftOutcome:
    report: DriftReport
    identity: DriftReport
    noise_floor: float


def drift(cfg: RunConfig, scenario: DriftScenario | None = None) -> DriftOutcome:
    scenario = scenario or drift_scenario(cfg)
    eng = drift_engine(cfg)
    snap = pretrain(scenario, eng)
    report = run_drift_experiment(scenario, eng, snap, cfg.top_k)
    identity = run_drift_experiment(replace(scenario, shift={}), eng, snap, cfg.top_k)
    floor = control_noise_floor(scenario, eng, snap)
    return DriftOutcome(report, identity, floor)
