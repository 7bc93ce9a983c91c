"""Synthetic and file-backed datasets for the experiments."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyDataset
from .learners.base import TrainingPair


def topic_of(token: int, n_topics: int) -> int:
    return token % n_topics


def topic_members(vocab_size: int, n_topics: int) -> list[np.ndarray]:
    ids = np.arange(vocab_size)
    return [ids[ids % n_topics == k] for k in range(n_topics)]


def topic_corpus(
    vocab_size: int,
    n_topics: int,
    n_sentences: int,
    sentence_len: int,
    seed: int,
    moved: Mapping[int, int] | None = None,
    zipf: float = 1.0,
) -> list[list[int]]:
    """Sentences drawn from one topic each.

    Token ``t`` belongs to topic ``t % n_topics``; within a topic, tokens are
    drawn with Zipf-like weights ``1/(rank+1)**zipf``. ``moved`` maps a token to
    the topic it belongs to instead, so a moved token shows up among another
    topic's words and never in its home topic.
    """
    if n_topics < 1 or vocab_size < n_topics:
        raise ValueError("need at least one token per topic")
    moved = dict(moved or {})
    home = {t: topic_of(t, n_topics) for t in range(vocab_size)}
    home.update(moved)
    members = [[t for t in range(vocab_size) if home[t] == k] for k in range(n_topics)]
    probs = []
    for m in members:
        w = 1.0 / (np.arange(len(m)) + 1.0) ** zipf
        probs.append(w / w.sum())
    rng = np.random.default_rng(seed)
    topics = rng.integers(0, n_topics, size=n_sentences)
    out = []
    for k in topics:
        m = members[k]
        if not m:
            continue
        out.append([int(m[i]) for i in rng.choice(len(m), size=sentence_len, p=probs[k])])
    return out


def gaussian_blobs(
    n: int,
    features: int,
    classes: int,
    seed: int,
    spread: float = 1.0,
    separation: float = 2.0,
) -> list[TrainingPair]:
    """Isotropic Gaussian clusters, one per class, with seeded centres."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, separation, size=(classes, features))
    ys = rng.integers(0, classes, size=n)
    xs = centres[ys] + rng.normal(0.0, spread, size=(n, features))
    xs = xs.astype(np.float32)
    return [TrainingPair(xs[i], int(ys[i])) for i in range(n)]


def load_text_corpus(path) -> list[list[str]]:
    """One sentence per non-empty line, whitespace tokenized, lowercased."""
    sents = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        toks = line.lower().split()
        if toks:
            sents.append(toks)
    if not sents:
        raise EmptyDataset(f"{path} has no tokens")
    return sents


def load_csv_dataset(path, label_column: int = 0) -> list[TrainingPair]:
    """Numeric CSV rows ``label,f1,...,fd`` (no header) into TrainingPairs."""
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            vals = [float(v) for v in row]
            y = int(vals.pop(label_column))
            pairs.append(TrainingPair(np.asarray(vals, dtype=np.float32), y))
    if not pairs:
        raise EmptyDataset(f"{path} has no rows")
    return pairs


def split_sentences(tokens: Sequence[int], length: int) -> list[list[int]]:
    return [list(tokens[i : i + length]) for i in range(0, len(tokens), length)]
