"""Learner contract, parameter storage and gradient payloads."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .. import kernels
from ..errors import DimensionMismatch


class TrainingPair(NamedTuple):
    x: Any
    y: Any


@dataclass
class LearnerSpec:
    kind: str
    alpha: float = 0.01
    seed: int = 0
    hyper: dict = field(default_factory=dict)
    dtype: str = "float32"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        for k, v in self.hyper.items():
            if isinstance(v, int) and not isinstance(v, bool) and v <= 0 and k not in _MAY_BE_ZERO:
                raise ValueError(f"hyperparameter {k} must be positive")


_MAY_BE_ZERO = {"hidden", "negatives", "seed"}


@dataclass
class ParamStore:
    """All parameters of one replica in a single contiguous buffer.

    ``layout`` maps tensor names to ``(offset, shape)`` inside ``flat``. Sparse
    gradients address rows of ``flat.reshape(-1, row_width)``.
    """

    flat: np.ndarray
    layout: dict[str, tuple[int, tuple[int, ...]]]
    row_width: int = 1

    def view(self, name: str) -> np.ndarray:
        off, shape = self.layout[name]
        size = int(np.prod(shape))
        return self.flat[off : off + size].reshape(shape)

    def rows(self) -> np.ndarray:
        return self.flat.reshape(-1, self.row_width)

    def copy(self) -> "ParamStore":
        return ParamStore(self.flat.copy(), dict(self.layout), self.row_width)

    def astype(self, dtype) -> "ParamStore":
        return ParamStore(self.flat.astype(dtype), dict(self.layout), self.row_width)

    def digest(self) -> str:
        return hashlib.sha256(self.flat.tobytes()).hexdigest()

    def __len__(self) -> int:
        return self.flat.size


@dataclass(frozen=True)
class DenseDelta:
    values: np.ndarray

    @property
    def nbytes(self) -> int:
        return self.values.nbytes

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def densify(self, size: int, row_width: int = 1) -> "DenseDelta":
        return self


@dataclass(frozen=True)
class SparseDelta:
    """Row updates: ``rows`` sorted and unique, ``values`` shaped (len(rows), width)."""

    rows: np.ndarray
    values: np.ndarray

    @property
    def nbytes(self) -> int:
        return self.values.nbytes

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def densify(self, size: int, row_width: int) -> DenseDelta:
        dense = np.zeros(size, dtype=self.values.dtype)
        dense.reshape(-1, row_width)[self.rows] = self.values
        return DenseDelta(dense)


Delta = DenseDelta | SparseDelta


def freeze(delta: Delta) -> Delta:
    """Make the arrays read-only; gradients are immutable once sent."""
    for arr in (getattr(delta, "values", None), getattr(delta, "rows", None)):
        if arr is not None:
            arr.flags.writeable = False
    return delta


def apply_delta(params: ParamStore, delta: Delta, alpha: float) -> None:
    """In-place gradient application: ``theta <- theta - alpha * delta``."""
    flat = params.flat
    if isinstance(delta, DenseDelta):
        if delta.values.shape != flat.shape:
            raise DimensionMismatch(f"dense delta of {delta.values.shape} for {flat.shape} params")
        np.subtract(flat, flat.dtype.type(alpha) * delta.values, out=flat)
        return
    rows2d = params.rows()
    if delta.values.ndim != 2 or delta.values.shape[1] != params.row_width:
        raise DimensionMismatch(f"sparse rows of width {delta.values.shape[1:]} for width {params.row_width}")
    if delta.rows.size and (delta.rows[0] < 0 or delta.rows[-1] >= rows2d.shape[0]):
        raise DimensionMismatch("sparse delta row index out of range")
    if delta.values.dtype != flat.dtype:
        raise DimensionMismatch(f"delta dtype {delta.values.dtype} != params {flat.dtype}")
    kernels.apply_rows(rows2d, np.ascontiguousarray(delta.rows, dtype=np.int64), np.ascontiguousarray(delta.values), alpha)


def as_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    """Accept a MiniBatch, a sequence of TrainingPair, or an (xs, ys) tuple."""
    if hasattr(batch, "xs"):
        return batch.xs, batch.ys
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        return batch
    pairs = list(batch)
    if not pairs:
        raise ValueError("empty batch")
    return np.asarray([p[0] for p in pairs]), np.asarray([p[1] for p in pairs])


class Learner:
    """A trainable model: loss, exact gradient and prediction over a ParamStore."""

    kind = "abstract"
    sparse = False

    def __init__(self, spec: LearnerSpec, **extra):
        self.spec = spec
        self.dtype = np.dtype(spec.dtype)
        self._extra = extra

    @property
    def alpha(self) -> float:
        return self.spec.alpha

    def init_params(self) -> ParamStore:
        raise NotImplementedError

    def loss(self, params: ParamStore, batch) -> float:
        raise NotImplementedError

    def gradient(self, params: ParamStore, batch) -> tuple[float, Delta]:
        """Return ``(loss at params, gradient)`` for one batch."""
        raise NotImplementedError

    def predict(self, params: ParamStore, inputs):
        raise NotImplementedError

    def shard_key(self, batch) -> str:
        return str(batch.id)

    def gc_cost_ns(self, n_pairs: int) -> int:
        return 1_000 * n_pairs

    def ga_cost_ns(self, delta: Delta) -> int:
        return max(1, delta.values.size // 4)

    def with_dtype(self, dtype) -> "Learner":
        """Same learner computing in ``dtype`` (float64 for gradient checks)."""
        spec = replace(self.spec, dtype=np.dtype(dtype).name, hyper=dict(self.spec.hyper))
        return type(self)(spec, **self._extra)


_REGISTRY: dict[str, Callable[[LearnerSpec], Learner]] = {}


def register(kind: str):
    def deco(cls):
        cls.kind = kind
        _REGISTRY[kind.lower()] = cls
        return cls

    return deco


def make_learner(spec: LearnerSpec, **extra) -> Learner:
    try:
        cls = _REGISTRY[spec.kind.lower()]
    except KeyError:
        raise ValueError(f"unknown learner kind {spec.kind!r}; have {sorted(_REGISTRY)}") from None
    return cls(spec, **extra)


def scale_learning_rate(alpha: float, n_ranks: int) -> float:
    """Linear learning-rate scaling for ``n_ranks`` replicas."""
    if n_ranks < 1:
        raise ValueError("n_ranks must be >= 1")
    return alpha * n_ranks


def sequential_sgd(
    learner: Learner,
    params: ParamStore,
    batches: Iterable,
    alpha: float | None = None,
    on_step: Callable[[int, float, ParamStore], None] | None = None,
) -> list[float]:
    """Plain one-replica SGD; the reference every distributed run is held to.

    Sparse gradients are densified and applied with a full-vector update, a
    different code path from the engine's in-place row kernel.
    """
    alpha = learner.alpha if alpha is None else alpha
    a = params.flat.dtype.type(alpha)
    losses = []
    for i, batch in enumerate(batches):
        loss, delta = learner.gradient(params, batch)
        dense = delta.densify(params.flat.size, params.row_width).values
        params.flat[...] = params.flat - a * dense
        losses.append(loss)
        if on_step is not None:
            on_step(i, loss, params)
    return losses


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return np.array([v.mean()]) if v.size else v
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window
