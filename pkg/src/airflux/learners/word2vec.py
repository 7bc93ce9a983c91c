"""Skip-gram Word2Vec with negative sampling (sparse updates)."""

from __future__ import annotations

import struct
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import kernels
from ..errors import DimensionMismatch, EmptyVocabulary
from .base import Learner, ParamStore, SparseDelta, TrainingPair, as_arrays, freeze, register

NEG_EXPONENT = 0.75


class Vocabulary:
    """Token <-> id map; ids follow descending count, ties broken by token text."""

    def __init__(self, tokens: Sequence[str], counts: Sequence[int]):
        if not tokens:
            raise EmptyVocabulary("vocabulary is empty")
        self.tokens = list(tokens)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, tokens: Iterable[str], min_count: int = 1) -> "Vocabulary":
        c = Counter(tokens)
        items = sorted(((t, n) for t, n in c.items() if n >= min_count), key=lambda kv: (-kv[1], kv[0]))
        if not items:
            raise EmptyVocabulary("no token reaches min_count")
        return cls([t for t, _ in items], [n for _, n in items])

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index[t] for t in tokens if t in self.index]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t, n in zip(self.tokens, self.counts):
                fh.write(f"{t}\t{int(n)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        tokens, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                t, _, n = line.rpartition("\t")
                tokens.append(t)
                counts.append(int(n))
        return cls(tokens, counts)


def negative_distribution(counts: Sequence[int]) -> np.ndarray:
    w = np.asarray(counts, dtype=np.float64) ** NEG_EXPONENT
    return w / w.sum()


def make_pairs_word2vec(
    sentences: Iterable[Sequence[int]],
    window: int,
    negatives: int,
    seed: int,
    counts: Sequence[int] | None = None,
    vocab_size: int | None = None,
) -> list[TrainingPair]:
    """Skip-gram pairs ``((center, context), 1)`` plus ``negatives`` ``((center, sampled), 0)`` each.

    Negatives are drawn from the unigram distribution raised to 0.75 given by
    ``counts``; the context window does not cross sentence boundaries.
    """
    sentences = [list(s) for s in sentences]
    if counts is None:
        c = Counter(t for s in sentences for t in s)
        if not c:
            raise EmptyVocabulary("no tokens")
        vocab_size = vocab_size or (max(c) + 1)
        counts = [c.get(i, 0) for i in range(vocab_size)]
    if len(counts) == 0 or sum(counts) == 0:
        raise EmptyVocabulary("no tokens")
    probs = negative_distribution(counts)
    rng = np.random.default_rng(seed)
    positives: list[tuple[int, int]] = []
    for sent in sentences:
        n = len(sent)
        for i, center in enumerate(sent):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    positives.append((center, sent[j]))
    negs = rng.choice(len(probs), size=(len(positives), negatives), p=probs) if negatives else None
    pairs: list[TrainingPair] = []
    for p, (center, ctx) in enumerate(positives):
        pairs.append(TrainingPair((center, ctx), 1))
        if negs is not None:
            pairs.extend(TrainingPair((center, int(t)), 0) for t in negs[p])
    return pairs


@register("word2vec")
class Word2Vec(Learner):
    """Input and output embeddings stacked as rows ``[0, V)`` and ``[V, 2V)``."""

    sparse = True

    def __init__(self, spec, vocab: Vocabulary | None = None):
        super().__init__(spec, vocab=vocab)
        h = spec.hyper
        self.vocab = vocab
        self.V = int(h.get("vocab_size") or (len(vocab) if vocab is not None else 0))
        self.d = int(h.get("dim", 16))
        if self.V <= 0:
            raise EmptyVocabulary("word2vec needs vocab_size or a vocabulary")

    def init_params(self) -> ParamStore:
        rng = np.random.default_rng(self.spec.seed)
        V, d = self.V, self.d
        flat = np.zeros(2 * V * d, dtype=self.dtype)
        flat[: V * d] = rng.uniform(-0.5 / d, 0.5 / d, size=V * d)
        layout = {"input": (0, (V, d)), "output": (V * d, (V, d))}
        return ParamStore(flat, layout, row_width=d)

    def _arrays(self, batch):
        xs, ys = as_arrays(batch)
        xs = np.asarray(xs, dtype=np.int64).reshape(-1, 2)
        if xs.size == 0:
            raise ValueError("empty batch")
        if xs.min() < 0 or xs.max() >= self.V:
            raise DimensionMismatch(f"token id out of range [0, {self.V})")
        return xs[:, 0].copy(), xs[:, 1] + self.V, np.asarray(ys, dtype=self.dtype)

    def loss(self, params: ParamStore, batch) -> float:
        centers, contexts, y = self._arrays(batch)
        E = params.rows()
        z = np.einsum("ij,ij->i", E[centers], E[contexts]).astype(np.float64)
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def gradient(self, params: ParamStore, batch):
        centers, contexts, y = self._arrays(batch)
        rows = np.unique(np.concatenate([centers, contexts]))
        out = np.zeros((rows.size, self.d), dtype=params.flat.dtype)
        total = kernels.sgns_grad(
            params.rows(),
            centers,
            contexts,
            y.astype(params.flat.dtype),
            np.searchsorted(rows, centers),
            np.searchsorted(rows, contexts),
            out,
        )
        return total / centers.size, freeze(SparseDelta(rows, out))

    def predict(self, params: ParamStore, inputs):
        ids = np.asarray(inputs, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.V):
            raise DimensionMismatch("token id out of range")
        return params.view("input")[ids].copy()

    def shard_key(self, batch) -> str:
        center = int(batch.pairs[0].x[0])
        if self.vocab is not None:
            return self.vocab.tokens[center]
        return str(center)

    def gc_cost_ns(self, n_pairs: int) -> int:
        return 6 * n_pairs * self.d

    def ga_cost_ns(self, delta) -> int:
        return 2 * delta.values.size


def save_embeddings(path, params: ParamStore, vocab: Vocabulary | None = None) -> None:
    """Binary snapshot of the input embeddings: V u64, d u64, then V*d f32 (little-endian)."""
    emb = np.ascontiguousarray(params.view("input"), dtype="<f4")
    V, d = emb.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", V, d))
        fh.write(emb.tobytes())
    if vocab is not None:
        vocab.save(path.with_name(path.name + ".vocab"))


def load_embeddings(path) -> tuple[np.ndarray, Vocabulary | None]:
    path = Path(path)
    with open(path, "rb") as fh:
        V, d = struct.unpack("<QQ", fh.read(16))
        emb = np.frombuffer(fh.read(V * d * 4), dtype="<f4").reshape(V, d).copy()
    side = path.with_name(path.name + ".vocab")
    return emb, (Vocabulary.load(side) if side.exists() else None)
