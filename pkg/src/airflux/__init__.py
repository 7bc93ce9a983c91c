"""Decentralized asynchronous SGD on a small dataflow engine."""

__version__ = "0.1.0"

from .dataflow import ASGD, SSP, SYNC, Mode, build_graph, run_graph  # noqa: E402
from .learners import LearnerSpec, make_learner  # noqa: E402
from .pipeline import train, training_graph  # noqa: E402

__all__ = [
    "ASGD",
    "SSP",
    "SYNC",
    "LearnerSpec",
    "Mode",
    "__version__",
    "build_graph",
    "make_learner",
    "run_graph",
    "train",
    "training_graph",
]
