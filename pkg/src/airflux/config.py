"""Run configuration: INI-style ``key = value`` sections with layered overrides.

Precedence, lowest to highest: built-in defaults, the config file, the
``AIRFLUX_SEED`` environment variable (seed only), command-line flags.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

from .errors import ConfigError

SEED_ENV = "AIRFLUX_SEED"


def _f(section: str, default, help: str = ""):
    return field(default=default, metadata={"section": section, "help": help})


@dataclass
class RunConfig:
    # [run]
    graph: str = _f("run", "training", "topology; only the source -> model training graph is built in")
    mode: str = _f("run", "asgd", "asgd, sync or ssp:<k>")
    n_ranks: int = _f("run", 1)
    max_grad_buffer: int = _f("run", 1)
    batch_size: int = _f("run", 32)
    alpha_scaling: bool = _f("run", False, "multiply alpha by n_ranks")
    passes: int = _f("run", 1)
    seed: int = _f("run", 0)
    scheduler: str = _f("run", "replay", "replay (deterministic) or threads")
    queue_capacity: int = _f("run", 1024)
    out_dir: str = _f("run", "runs/out")
    # [learner]
    learner: str = _f("learner", "word2vec", "word2vec, dense, linear or quadratic")
    alpha: float = _f("learner", 2.0)
    dim: int = _f("learner", 16)
    vocab_size: int = _f("learner", 500)
    window: int = _f("learner", 2)
    negatives: int = _f("learner", 5)
    features: int = _f("learner", 32)
    classes: int = _f("learner", 8)
    hidden: int = _f("learner", 64)
    # [data]
    data_file: str = _f("data", "", "word2vec: text, one sentence per line; dense: CSV label,f1,...,fd; empty for synthetic data")
    n_topics: int = _f("data", 10)
    n_sentences: int = _f("data", 500)
    sentence_len: int = _f("data", 10)
    examples: int = _f("data", 48000)
    spread: float = _f("data", 2.0)
    shuffle: bool = _f("data", True)
    # [experiment]
    ranks: tuple = _f("experiment", (1, 2, 4))
    batch_sizes: tuple = _f("experiment", (16, 64))
    speedup_batches: int = _f("experiment", 400)
    rates: tuple = _f("experiment", (), "offered events/s; empty derives them from the capacity estimate")
    rate_factors: tuple = _f("experiment", (0.5, 10.0))
    window_s: float = _f("experiment", 2.0, "wall-clock measurement window for the threads scheduler")
    virtual_window_s: float = _f("experiment", 0.02, "virtual-time measurement window for the replay scheduler")
    # [drift]
    drift_vocab_size: int = _f("drift", 200)
    drift_topics: int = _f("drift", 4)
    drift_sentences: int = _f("drift", 1200)
    drift_time: int = _f("drift", 600)
    shift_every: int = _f("drift", 10, "every k-th token moves to the next topic; 0 for no drift")
    pre_passes: int = _f("drift", 3)
    post_passes: int = _f("drift", 3)
    top_k: int = _f("drift", 10)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        from .dataflow.runtime import Mode

        try:
            m = Mode.parse(self.mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if m.kind == "sync" and self.n_ranks != 1:
            raise ConfigError("sync mode runs a single replica; set n_ranks = 1")
        for name in ("n_ranks", "max_grad_buffer", "batch_size", "passes", "dim", "vocab_size", "queue_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.scheduler not in ("replay", "threads"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.learner not in ("word2vec", "dense", "linear", "quadratic"):
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.graph != "training":
            raise ConfigError(f"unknown graph {self.graph!r}")
        if not self.ranks or min(self.ranks) < 1:
            raise ConfigError("ranks must be positive")
        if self.window_s <= 0 or self.virtual_window_s <= 0:
            raise ConfigError("measurement windows must be > 0")
        if not 0 < self.drift_time < self.drift_sentences:
            raise ConfigError("drift_time must fall inside the stream")

    @property
    def effective_alpha(self) -> float:
        return self.alpha * self.n_ranks if self.alpha_scaling else self.alpha

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, _format(getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        known = {f.name: f for f in fields(cls)}
        updates = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if key not in known:
                    raise ConfigError(f"unknown key [{sec}] {key}")
                if known[key].metadata["section"] != sec:
                    raise ConfigError(f"{key} belongs in [{known[key].metadata['section']}], not [{sec}]")
                updates[key] = raw
        return (base or cls()).override(updates)

    def override(self, updates: Mapping[str, Any]) -> "RunConfig":
        """New config with string or typed values applied."""
        known = {f.name: f for f in fields(self)}
        typed = {}
        for key, value in updates.items():
            if key not in known:
                raise ConfigError(f"unknown setting {key!r}")
            typed[key] = _parse(known[key], value) if isinstance(value, str) else value
        try:
            return dataclasses.replace(self, **typed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    default = f.default
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            as_float = f.name in ("rates", "rate_factors")
            return tuple(float(x) if as_float else int(x) for x in items)
    except ValueError as exc:
        raise ConfigError(f"{f.name}: {exc}") from None
    return raw


def load_config(path=None, overrides: Mapping[str, str] | None = None, env: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults, then ``path``, then ``AIRFLUX_SEED``, then ``overrides``."""
    cfg = RunConfig()
    if path:
        try:
            text = open(path, encoding="utf-8").read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = RunConfig.from_ini(text, cfg)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        cfg = cfg.override({"seed": env[SEED_ENV]})
    if overrides:
        cfg = cfg.override(overrides)
    return cfg
