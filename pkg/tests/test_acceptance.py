"""Exit criteria, each at its stated tolerance and runtime limit."""

import os
import time
from contextlib import nullcontext
from dataclasses import replace

import numpy as np
import pytest

from airflux import cli
from airflux.config import RunConfig
from airflux.datasets import gaussian_blobs, topic_corpus
from airflux.drift import DriftEngineConfig, DriftScenario, control_noise_floor, pretrain, rotate_topics, run_drift_experiment
from airflux.experiments import InsufficientCores, converge, dense_scaling, scripted_three_rank_run, speedup, throughput
from airflux.learners import LearnerSpec, TrainingPair, make_learner, make_pairs_word2vec, sequential_sgd
from airflux.model import replay_staleness_oracle
from airflux.pipeline import replicas, train

import oracles

pytestmark = pytest.mark.acceptance


class Clock:
    def __init__(self, limit_s):
        self.limit = limit_s
        self.t0 = time.monotonic()

    @property
    def elapsed(self):
        return time.monotonic() - self.t0

    def ok(self):
        return self.elapsed < self.limit


def note(record_property, text):
    record_property("detail", text)


def w2v_pairs(V=500, topics=10, sentences=500, seed=0):
    pairs = make_pairs_word2vec(topic_corpus(V, topics, sentences, 10, seed), 2, 5, seed, vocab_size=V)
    order = np.random.default_rng(seed).permutation(len(pairs))
    return [pairs[i] for i in order]


def test_criterion_01_single_rank_equivalence(record_property):
    clock = Clock(60)
    b = 16
    cases = {
        "word2vec": (LearnerSpec("word2vec", 2.0, 0, {"vocab_size": 500, "dim": 16}), w2v_pairs()[: 2000 * b]),
        "dense": (LearnerSpec("dense", 0.1, 0, {"features": 32, "classes": 8, "hidden": 64}), gaussian_blobs(2000 * b, 32, 8, 0)),
        "quadratic": (LearnerSpec("quadratic", 0.01, 0, {"dim": 32}), [TrainingPair(0, 0)] * (2000 * b)),
    }
    same = {}
    for name, (spec, data) in cases.items():
        learner = make_learner(spec)
        rt = train(learner, data, n_ranks=1, batch_size=b, trace_digests=True)
        engine = replicas(rt)[0].digests
        batches = [data[i : i + b] for i in range(0, len(data), b)]
        ref = []
        sequential_sgd(learner, learner.init_params(), batches, on_step=lambda i, l, q: ref.append(q.digest()))
        same[name] = len(engine) == 2000 and engine == ref
    note(record_property, f"bit-identical 2000-step trajectories {same}; {clock.elapsed:.1f}s")
    assert all(same.values()) and clock.ok()


def fd_cases(spec, n, seed):
    learner = make_learner(spec).with_dtype(np.float64)
    rng = np.random.default_rng(seed)
    for _ in range(n):
        params = learner.init_params()
        params.flat[...] = rng.normal(scale=0.5, size=params.flat.size)
        if spec.kind == "word2vec":
            V = spec.hyper["vocab_size"]
            batch = [TrainingPair((int(rng.integers(V)), int(rng.integers(V))), int(rng.integers(2))) for _ in range(8)]
        elif spec.kind == "dense":
            batch = [TrainingPair(rng.normal(size=spec.hyper["features"]), int(rng.integers(spec.hyper["classes"]))) for _ in range(8)]
        else:
            batch = None
        yield learner, params, batch


def test_criterion_02_gradient_correctness(record_property):
    from airflux.learners import ParamStore

    clock = Clock(120)
    specs = [
        LearnerSpec("word2vec", 0.5, 0, {"vocab_size": 20, "dim": 6}),
        LearnerSpec("dense", 0.1, 0, {"features": 6, "classes": 4, "hidden": 5}),
        LearnerSpec("quadratic", 0.1, 0, {"dim": 10}),
    ]
    worst = {}
    for spec in specs:
        errs = []
        for learner, params, batch in fd_cases(spec, 50, 1):
            _, delta = learner.gradient(params, batch)
            g = delta.densify(params.flat.size, params.row_width).values

            def f(theta):
                return learner.loss(ParamStore(theta, params.layout, params.row_width), batch)

            num = oracles.central_difference(f, params.flat, h=1e-4)
            errs.append(np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-12))
        worst[spec.kind] = max(errs)
    note(record_property, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {clock.elapsed:.1f}s")
    assert all(v < 1e-4 for v in worst.values()) and clock.ok()


def test_criterion_03_staleness_fidelity(record_property):
    clock = Clock(120)
    reps = replicas(scripted_three_rank_run())
    rank0 = {(s.origin, s.origin_seq): s.staleness for s in reps[0].staleness_log}
    scripted_ok = rank0[(1, 1)] == 2 and rank0[(2, 1)] == 3
    locals_ok = all(s.staleness == 0 for r in reps for s in r.staleness_log if s.origin == r.rank)
    learner = make_learner(LearnerSpec("word2vec", 2.0, 0, {"vocab_size": 500, "dim": 16}))
    rt = train(learner, w2v_pairs()[: 500 * 16], n_ranks=4, batch_size=16, seed=7, record_history=True)
    checked, bad = replay_staleness_oracle(dict(enumerate(replicas(rt))))
    note(
        record_property,
        f"scripted remote staleness {rank0[(1, 1)]}/{rank0[(2, 1)]}, locals zero {locals_ok}; "
        f"random run {checked - len(bad)}/{checked} records match; {clock.elapsed:.1f}s",
    )
    assert scripted_ok and locals_ok and checked == 4 * 500 and not bad and clock.ok()


def test_criterion_04_eventual_alignment(record_property):
    clock = Clock(120)
    failures = []
    for seed in range(20):
        n = 2 + seed % 3
        learner = make_learner(LearnerSpec("linear", 0.25, seed, {"dim": 16}))
        rt = train(learner, [TrainingPair(0, 0)] * 200, n_ranks=n, batch_size=2, seed=seed)
        reps = replicas(rt)
        clocks = {r.state.clock() for r in reps}
        thetas = {r.theta.flat.tobytes() for r in reps}
        if len(clocks) != 1 or sum(next(iter(clocks))) != 100 or len(thetas) != 1:
            failures.append((seed, n))
    note(record_property, f"20 runs, n in {{2,3,4}}, misaligned {failures}; {clock.elapsed:.1f}s")
    assert not failures and clock.ok()


def test_criterion_05_sparse_convergence(record_property):
    clock = Clock(300)
    cfg = RunConfig(learner="word2vec", ranks=(1, 2, 4), batch_size=32, passes=2, seed=1)
    res = converge(cfg)
    rel = {n: res.relative_to_single(n) for n in (2, 4)}
    finals = ", ".join(f"n={n} {res.final(n):.4f}" for n in (1, 2, 4))
    note(record_property, f"final 100-batch loss {finals}; worst deviation {100 * max(rel.values()):.2f}%; {clock.elapsed:.1f}s")
    assert max(rel.values()) <= 0.05 and clock.ok()


def test_criterion_06_dense_alpha_scaling(record_property):
    clock = Clock(300)
    cfg = RunConfig(learner="dense", alpha=0.1, batch_size=32, examples=48000, spread=2.0)
    res = dense_scaling(cfg, n=4, seeds=(0, 1, 2))
    note(
        record_property,
        f"n=1 {np.mean(res.single):.5f} (sd {res.noise:.5f}); gap off {res.gap_off:.5f}, gap on {res.gap_on:.5f}; "
        f"needs on <= 0.5 x off; {clock.elapsed:.1f}s",
    )
    assert res.gap_on <= 0.5 * res.gap_off and clock.ok()


def test_criterion_07_throughput_scaling(record_property):
    clock = Clock(300)
    cores = os.cpu_count() or 1
    cfg = RunConfig(
        learner="dense", features=256, hidden=512, classes=10, alpha=0.01, examples=12800,
        scheduler="threads", ranks=(1, 4), batch_sizes=(64,), speedup_batches=800,
    )
    with nullcontext() if cores >= 4 else pytest.warns(InsufficientCores):
        rows = speedup(cfg)
    eps = {r.n_ranks: r.examples_per_s for r in rows}
    ratio = eps[4] / eps[1]
    note(record_property, f"{cores} core(s); n=1 {eps[1]:.0f}/s, n=4 {eps[4]:.0f}/s, ratio {ratio:.2f} (needs >= 2.4); {clock.elapsed:.1f}s")
    assert ratio >= 2.4 and clock.ok()


def test_criterion_08_sustainable_throughput(record_property):
    clock = Clock(180)
    cfg = RunConfig(scheduler="threads", window_s=3.0, rate_factors=(0.5, 10.0))
    cap, reports, _ = throughput(cfg)
    low, high = reports
    growth = high.segment_p99
    monotone = all(b > a for a, b in zip(growth, growth[1:]))
    note(
        record_property,
        f"capacity {cap:.0f}/s; 0.5x sustainable={low.sustainable} p99 {low.latency_p99 / 1e6:.2f}ms; "
        f"10x sustainable={high.sustainable} segment p99 ms {[round(v / 1e6, 1) for v in growth]}; {clock.elapsed:.1f}s",
    )
    assert low.sustainable and not high.sustainable and monotone and clock.ok()


def test_criterion_09_drift_ordinality(record_property):
    clock = Clock(300)
    scen = DriftScenario(shift=rotate_topics(range(0, 200, 10), 4))
    cfg = DriftEngineConfig()
    snap = pretrain(scen, cfg)
    rep = run_drift_experiment(scen, cfg, snap)
    floor = control_noise_floor(scen, cfg, snap)
    ident = run_drift_experiment(replace(scen, shift={}), cfg, snap)
    note(
        record_property,
        f"shifted median {rep.shifted_median:.3f} vs unshifted {rep.unshifted_median:.3f}; "
        f"no-drift mean {ident.mean:.3f} vs floor {floor:.3f}; {clock.elapsed:.1f}s",
    )
    assert rep.shifted_median > rep.unshifted_median and ident.mean < floor and clock.ok()


SMALL = """\
[learner]
vocab_size = 80
dim = 8
[data]
n_topics = 4
n_sentences = 100
sentence_len = 8
examples = 800
[experiment]
ranks = 1, 2, 4
batch_sizes = 8, 32
speedup_batches = 40
virtual_window_s = 0.002
[drift]
drift_vocab_size = 40
drift_topics = 2
drift_sentences = 200
drift_time = 100
pre_passes = 1
post_passes = 1
"""


def test_criterion_10_determinism(record_property, tmp_path):
    clock = Clock(300)
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL)
    differing = []
    for command in cli.COMMANDS:
        outs = []
        for k in range(2):
            out = tmp_path / f"{command}{k}"
            assert cli.main([command, "--config", str(cfg), "--out", str(out), "--n-ranks", "3", "--seed", "11"]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        if outs[0] != outs[1]:
            differing.append(command)
    note(record_property, f"{len(cli.COMMANDS)} commands re-run, differing outputs {differing}; {clock.elapsed:.1f}s")
    assert not differing and clock.ok()
