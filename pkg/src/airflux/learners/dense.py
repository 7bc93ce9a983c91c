"""Dense-update learners: softmax classifier / one-hidden-layer MLP, and analytic toys."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch
from .base import DenseDelta, Learner, ParamStore, as_arrays, freeze, register


def _layout(sizes: list[tuple[str, tuple[int, ...]]]):
    layout, off = {}, 0
    for name, shape in sizes:
        layout[name] = (off, shape)
        off += int(np.prod(shape))
    return layout, off


@register("dense")
class DenseClassifier(Learner):
    """Softmax regression, or a tanh MLP when ``hidden > 0``."""

    def __init__(self, spec, **extra):
        super().__init__(spec, **extra)
        h = spec.hyper
        self.D = int(h.get("features", 8))
        self.C = int(h.get("classes", 4))
        self.H = int(h.get("hidden", 0))
        if self.H:
            shapes = [("W1", (self.D, self.H)), ("b1", (self.H,)), ("W2", (self.H, self.C)), ("b2", (self.C,))]
        else:
            shapes = [("W", (self.D, self.C)), ("b", (self.C,))]
        self.layout, self.size = _layout(shapes)

    def init_params(self) -> ParamStore:
        rng = np.random.default_rng(self.spec.seed)
        p = ParamStore(np.zeros(self.size, dtype=self.dtype), dict(self.layout))
        for name, (_, shape) in self.layout.items():
            if len(shape) == 2:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                p.view(name)[...] = rng.uniform(-limit, limit, size=shape)
        return p

    def _arrays(self, batch, dtype):
        xs, ys = as_arrays(batch)
        X = np.asarray(xs, dtype=dtype).reshape(-1, self.D) if np.ndim(xs) else None
        if X is None or X.shape[0] == 0:
            raise ValueError("empty batch")
        y = np.asarray(ys, dtype=np.int64).reshape(-1)
        if y.min() < 0 or y.max() >= self.C:
            raise DimensionMismatch(f"class id out of range [0, {self.C})")
        return X, y

    def _forward(self, p: ParamStore, X):
        if self.H:
            h = np.tanh(X @ p.view("W1") + p.view("b1"))
            logits = h @ p.view("W2") + p.view("b2")
        else:
            h = None
            logits = X @ p.view("W") + p.view("b")
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return h, shifted - logz

    def loss(self, params: ParamStore, batch) -> float:
        X, y = self._arrays(batch, params.flat.dtype)
        _, logp = self._forward(params, X)
        return float(-logp[np.arange(y.size), y].astype(np.float64).mean())

    def gradient(self, params: ParamStore, batch):
        X, y = self._arrays(batch, params.flat.dtype)
        h, logp = self._forward(params, X)
        B = y.size
        loss = float(-logp[np.arange(B), y].astype(np.float64).mean())
        dlogits = np.exp(logp)
        dlogits[np.arange(B), y] -= 1
        dlogits /= B
        g = ParamStore(np.zeros_like(params.flat), params.layout)
        if self.H:
            g.view("W2")[...] = h.T @ dlogits
            g.view("b2")[...] = dlogits.sum(axis=0)
            dh = (dlogits @ params.view("W2").T) * (1 - h * h)
            g.view("W1")[...] = X.T @ dh
            g.view("b1")[...] = dh.sum(axis=0)
        else:
            g.view("W")[...] = X.T @ dlogits
            g.view("b")[...] = dlogits.sum(axis=0)
        return loss, freeze(DenseDelta(g.flat))

    def predict(self, params: ParamStore, inputs):
        X = np.asarray(inputs, dtype=params.flat.dtype)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.D:
            raise DimensionMismatch(f"expected {self.D} features, got {X.shape[1]}")
        _, logp = self._forward(params, X)
        return np.exp(logp)

    def gc_cost_ns(self, n_pairs: int) -> int:
        per = self.D * self.H + self.H * self.C if self.H else self.D * self.C
        return 6 * n_pairs * per // 4

    def ga_cost_ns(self, delta) -> int:
        return self.size // 2


@register("quadratic")
class QuadraticToy(Learner):
    """``L = 0.5 * ||theta - c||^2`` regardless of the batch contents."""

    def __init__(self, spec, **extra):
        super().__init__(spec, **extra)
        h = spec.hyper
        target = h.get("target")
        if target is None:
            rng = np.random.default_rng(spec.seed + 1)
            target = rng.normal(size=int(h.get("dim", 8)))
        self.c = np.asarray(target, dtype=np.float64)

    def init_params(self) -> ParamStore:
        return ParamStore(np.zeros(self.c.size, dtype=self.dtype), {"theta": (0, (self.c.size,))})

    def _check(self, params, batch):
        if params.flat.size != self.c.size:
            raise DimensionMismatch("theta size does not match target")
        if batch is not None and hasattr(batch, "__len__") and len(batch) == 0:
            raise ValueError("empty batch")

    def loss(self, params: ParamStore, batch=None) -> float:
        self._check(params, batch)
        r = params.flat.astype(np.float64) - self.c
        return float(0.5 * r @ r)

    def gradient(self, params: ParamStore, batch=None):
        self._check(params, batch)
        delta = params.flat - self.c.astype(params.flat.dtype)
        return self.loss(params, None), freeze(DenseDelta(delta))

    def predict(self, params: ParamStore, inputs=None):
        return params.flat.copy()

    def gc_cost_ns(self, n_pairs: int) -> int:
        return 2 * self.c.size


@register("linear")
class ConstantLinear(Learner):
    """``L = g . theta``: the gradient is the constant ``g`` whatever theta is.

    ``g`` has small dyadic entries so repeated f32 updates stay exact, which
    makes final parameters independent of application order.
    """

    def __init__(self, spec, **extra):
        super().__init__(spec, **extra)
        h = spec.hyper
        g = h.get("g")
        if g is None:
            rng = np.random.default_rng(spec.seed + 2)
            g = rng.integers(-4, 5, size=int(h.get("dim", 8))) / 4.0
        self.g = np.asarray(g, dtype=np.float64)

    def init_params(self) -> ParamStore:
        return ParamStore(np.zeros(self.g.size, dtype=self.dtype), {"theta": (0, (self.g.size,))})

    def loss(self, params: ParamStore, batch=None) -> float:
        return float(self.g @ params.flat.astype(np.float64))

    def gradient(self, params: ParamStore, batch=None):
        return self.loss(params), freeze(DenseDelta(self.g.astype(params.flat.dtype)))

    def predict(self, params: ParamStore, inputs=None):
        return params.flat.copy()

    def gc_cost_ns(self, n_pairs: int) -> int:
        return 2 * self.g.size
