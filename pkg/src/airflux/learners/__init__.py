from .base import (
    DenseDelta,
    Learner,
    LearnerSpec,
    ParamStore,
    SparseDelta,
    TrainingPair,
    apply_delta,
    make_learner,
    moving_average,
    scale_learning_rate,
    sequential_sgd,
)
from .dense import ConstantLinear, DenseClassifier, QuadraticToy
from .word2vec import (
    Vocabulary,
    Word2Vec,
    load_embeddings,
    make_pairs_word2vec,
    negative_distribution,
    save_embeddings,
)


def init_params(spec: LearnerSpec, **extra) -> ParamStore:
    return make_learner(spec, **extra).init_params()


__all__ = [
    "ConstantLinear",
    "DenseClassifier",
    "DenseDelta",
    "Learner",
    "LearnerSpec",
    "ParamStore",
    "QuadraticToy",
    "SparseDelta",
    "TrainingPair",
    "Vocabulary",
    "Word2Vec",
    "apply_delta",
    "init_params",
    "load_embeddings",
    "make_learner",
    "make_pairs_word2vec",
    "moving_average",
    "negative_distribution",
    "save_embeddings",
    "scale_learning_rate",
    "sequential_sgd",
]
