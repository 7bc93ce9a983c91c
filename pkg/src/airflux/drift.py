"""Synthetic concept drift for word embeddings and its measurement.

A scenario is a topic corpus in which, from sentence ``drift_time`` on, some
tokens stop appearing with their home topic and start appearing with another
one. The embedding is trained online through the whole stream; the input
embeddings just before the drift and at the end are compared token by token.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .datasets import topic_corpus, topic_of
from .errors import ConfigError, DimensionMismatch, ZeroNorm
from .learners.base import LearnerSpec, ParamStore
from .learners.word2vec import Word2Vec, make_pairs_word2vec


def cosine_difference(a, b) -> float:
    """``1 - cos(a, b)``, computed in float64 and clipped to [0, 2]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNorm("cosine difference of a zero vector")
    return float(min(2.0, max(0.0, 1.0 - float(a @ b) / (na * nb))))


def cosine_differences(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Row-wise :func:`cosine_difference` for two (V, d) matrices."""
    A = np.asarray(before, dtype=np.float64)
    B = np.asarray(after, dtype=np.float64)
    if A.shape != B.shape:
        raise DimensionMismatch(f"{A.shape} vs {B.shape}")
    na, nb = np.linalg.norm(A, axis=1), np.linalg.norm(B, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ZeroNorm("embedding row with zero norm")
    return np.clip(1.0 - np.einsum("ij,ij->i", A, B) / (na * nb), 0.0, 2.0)


@dataclass(frozen=True)
class DriftScenario:
    """Topic corpus plus a token -> new-topic map that takes effect at ``drift_time``.

    ``shift`` empty (or mapping every token to its home topic) is the
    no-drift case.
    """

    vocab_size: int = 200
    n_topics: int = 4
    n_sentences: int = 1200
    sentence_len: int = 10
    drift_time: int = 600
    shift: Mapping[int, int] = field(default_factory=dict)
    corpus_seed: int = 0

    def __post_init__(self):
        if not 0 < self.drift_time < self.n_sentences:
            raise ConfigError("drift_time must fall inside the stream")
        for t, k in self.shift.items():
            if not 0 <= t < self.vocab_size:
                raise ConfigError(f"shifted token {t} outside vocabulary")
            if not 0 <= k < self.n_topics:
                raise ConfigError(f"target topic {k} does not exist")

    @property
    def shifted_tokens(self) -> frozenset[int]:
        return frozenset(t for t, k in self.shift.items() if k != topic_of(t, self.n_topics))

    def streams(self) -> tuple[list[list[int]], list[list[int]]]:
        """Sentences before and after the drift point."""
        pre = topic_corpus(self.vocab_size, self.n_topics, self.drift_time, self.sentence_len, self.corpus_seed)
        post = topic_corpus(
            self.vocab_size,
            self.n_topics,
            self.n_sentences - self.drift_time,
            self.sentence_len,
            self.corpus_seed + 1,
            moved=self.shift,
        )
        return pre, post

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shift"] = {str(k): int(v) for k, v in sorted(self.shift.items())}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DriftScenario":
        d = dict(d)
        d["shift"] = {int(k): int(v) for k, v in dict(d.get("shift", {})).items()}
        return cls(**d)


def rotate_topics(tokens: Sequence[int], n_topics: int, by: int = 1) -> dict[int, int]:
    """Send each token to the topic ``by`` places after its own."""
    return {int(t): (topic_of(int(t), n_topics) + by) % n_topics for t in tokens}


@dataclass
class DriftEngineConfig:
    dim: int = 16
    alpha: float = 2.0
    window: int = 2
    negatives: int = 5
    batch_size: int = 32
    n_ranks: int = 1
    mode: str = "asgd"
    scheduler: str = "replay"
    pre_passes: int = 3
    post_passes: int = 3
    seed: int = 0


@dataclass
class DriftReport:
    tokens: list[int]
    diffs: np.ndarray
    shifted: frozenset[int] = frozenset()
    top_k: int = 10

    @property
    def mean(self) -> float:
        return float(np.mean(self.diffs))

    def table(self) -> list[tuple[int, float]]:
        finite = [(t, float(v)) for t, v in zip(self.tokens, self.diffs) if np.isfinite(v)]
        finite.sort(key=lambda tv: (-tv[1], tv[0]))
        return finite[: self.top_k]

    def median_of(self, tokens) -> float:
        sel = [v for t, v in zip(self.tokens, self.diffs) if t in tokens]
        return float(np.median(sel)) if sel else float("nan")

    @property
    def shifted_median(self) -> float:
        return self.median_of(self.shifted)

    @property
    def unshifted_median(self) -> float:
        return self.median_of(set(self.tokens) - set(self.shifted))

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.diffs, q))

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            "top_k": [{"token": t, "cosine_diff": v} for t, v in self.table()],
            "shifted_median": self.shifted_median if self.shifted else None,
            "unshifted_median": self.unshifted_median,
            "n_tokens": len(self.tokens),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("token,cosine_diff\n")
            for t, v in zip(self.tokens, self.diffs):
                fh.write(f"{t},{float(v)!r}\n")

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _train(learner, sentences, cfg: DriftEngineConfig, passes: int, init: ParamStore | None, seed: int) -> ParamStore:
    from .pipeline import replicas, train

    pairs = make_pairs_word2vec(sentences, cfg.window, cfg.negatives, seed, vocab_size=learner.V)
    order = np.random.default_rng(seed).permutation(len(pairs))
    pairs = [pairs[i] for i in order]
    rt = train(
        learner,
        pairs,
        mode=cfg.mode,
        scheduler=cfg.scheduler,
        seed=seed,
        n_ranks=cfg.n_ranks,
        batch_size=cfg.batch_size,
        passes=passes,
        init_params=init,
    )
    return replicas(rt)[0].theta.copy()


def pretrain(scenario: DriftScenario, cfg: DriftEngineConfig) -> tuple[Word2Vec, ParamStore]:
    """Train on the pre-drift stream; returns the learner and the snapshot at the drift point."""
    spec = LearnerSpec("word2vec", cfg.alpha, cfg.seed, {"vocab_size": scenario.vocab_size, "dim": cfg.dim})
    learner = Word2Vec(spec)
    pre, _ = scenario.streams()
    return learner, _train(learner, pre, cfg, cfg.pre_passes, None, cfg.seed)


def run_drift_experiment(
    scenario: DriftScenario,
    cfg: DriftEngineConfig | None = None,
    snapshot: tuple[Word2Vec, ParamStore] | None = None,
    top_k: int = 10,
) -> DriftReport:
    """Fine-tune past the drift point and report per-token displacement.

    ``snapshot`` reuses a pre-drift model (it is not modified); otherwise one
    is trained from the scenario's pre-drift sentences.
    """
    cfg = cfg or DriftEngineConfig()
    learner, before = snapshot if snapshot is not None else pretrain(scenario, cfg)
    _, post = scenario.streams()
    after = _train(learner, post, cfg, cfg.post_passes, before, cfg.seed + 1)
    diffs = cosine_differences(before.view("input"), after.view("input"))
    return DriftReport(list(range(scenario.vocab_size)), diffs, scenario.shifted_tokens, top_k)


def control_noise_floor(
    scenario: DriftScenario,
    cfg: DriftEngineConfig | None = None,
    snapshot=None,
    q: float = 0.95,
) -> float:
    """Displacement that continued training alone produces.

    Runs the scenario with no drift and a different post-drift sample, and
    returns the ``q`` quantile of the per-token cosine differences.
    """
    control = replace(scenario, shift={}, corpus_seed=scenario.corpus_seed + 1000)
    report = run_drift_experiment(control, cfg, snapshot)
    return report.quantile(q)
