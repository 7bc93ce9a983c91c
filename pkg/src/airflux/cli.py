"""``airflux`` command line: run experiments and write CSV/JSON artifacts.

Every command writes into ``--out`` (default from the config), echoes the
effective configuration as ``config.ini`` and writes ``manifest.json`` with
the sha256 of every artifact. Exit codes: 0 ok, 2 configuration error,
3 staleness oracle mismatch, 4 non-finite gradient, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

from . import __version__, kernels
from .config import RunConfig, load_config
from .errors import ConfigError, NonFiniteGradient, OracleMismatch

log = logging.getLogger("airflux")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_ORACLE, EXIT_NONFINITE = 0, 1, 2, 3, 4


class _ArgParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _num(v: float) -> str:
    return repr(float(v))


class Output:
    """Collects artifacts in one directory and writes the manifest last."""

    def __init__(self, root, command: str, cfg: RunConfig):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.files: list[str] = []
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def csv(self, name: str, header: Sequence[str], rows) -> None:
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def json(self, name: str, obj) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def lines(self, name: str, lines) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            for ln in lines:
                fh.write(ln + "\n")

    def finish(self) -> Path:
        (self.root / "config.ini").write_text(self.cfg.to_ini(), encoding="utf-8")
        names = sorted(set(self.files) | {"config.ini"})
        manifest = {
            "command": self.command,
            "version": __version__,
            "kernel_backend": kernels.BACKEND,
            "config": self.cfg.to_dict(),
            "artifacts": {n: hashlib.sha256((self.root / n).read_bytes()).hexdigest() for n in names},
            "rerun": f"airflux {self.command} --config config.ini",
        }
        manifest.update(self.extra)
        path = self.root / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


# -- commands --------------------------------------------------------------------


def cmd_run(cfg: RunConfig, args) -> int:
    from .experiments import collect_metrics, run_config

    out = Output(args.out or cfg.out_dir, "run", cfg)
    rt = run_config(cfg)
    m = collect_metrics(rt)
    out.csv("loss.csv", ["batch_id", "loss"], [(b, _num(l)) for b, l in m.loss])
    out.json("metrics.json", m.to_dict())
    out.finish()
    print(f"{len(m.loss)} batches, final loss {m.to_dict()['final_loss']:.6f}, wrote {out.root}")
    return EXIT_OK


def cmd_converge(cfg: RunConfig, args) -> int:
    from .experiments import converge

    if args.ranks:
        cfg = cfg.override({"ranks": args.ranks})
    out = Output(args.out or cfg.out_dir, "converge", cfg)
    res = converge(cfg)
    for n, curve in res.curves.items():
        out.csv(f"loss_n{n}.csv", ["batch_id", "loss"], [(b, _num(l)) for b, l in curve])
    out.csv("loss_sequential.csv", ["batch_id", "loss"], [(i + 1, _num(l)) for i, l in enumerate(res.reference)])
    rows = [(n, _num(res.final(n)), _num(res.relative_to_single(n))) for n in sorted(res.curves)]
    out.csv("converge.csv", ["n_ranks", "final_loss", "relative_to_base"], rows)
    out.extra["single_rank_matches_sequential"] = res.single_rank_matches
    out.finish()
    for n, fl, rel in rows:
        print(f"n={n}: final loss {float(fl):.6f} ({100 * float(rel):.2f}% from n={res.base_rank})")
    print(f"n=1 identical to sequential SGD: {res.single_rank_matches}")
    return EXIT_OK


def cmd_speedup(cfg: RunConfig, args) -> int:
    from .experiments import speedup

    if args.ranks:
        cfg = cfg.override({"ranks": args.ranks})
    if args.batch_sizes:
        cfg = cfg.override({"batch_sizes": args.batch_sizes})
    out = Output(args.out or cfg.out_dir, "speedup", cfg)
    rows = speedup(cfg)
    out.csv(
        "speedup.csv",
        ["n_ranks", "batch_size", "examples_per_s", "efficiency"],
        [(r.n_ranks, r.batch_size, f"{r.examples_per_s:.1f}", f"{r.efficiency:.4f}") for r in rows],
    )
    out.finish()
    for r in rows:
        print(f"n={r.n_ranks} N={r.batch_size}: {r.examples_per_s:.0f} examples/s, efficiency {r.efficiency:.2f}")
    return EXIT_OK


def cmd_staleness(cfg: RunConfig, args) -> int:
    from .experiments import staleness_trace

    out = Output(args.out or cfg.out_dir, "staleness", cfg)
    tr = staleness_trace(cfg)
    out.lines("staleness.jsonl", (r.to_json() for r in tr.records))
    out.csv("staleness_hist.csv", ["staleness", "count"], sorted(tr.histogram.items()))
    out.extra["oracle"] = {"checked": tr.checked, "mismatches": len(tr.mismatches)}
    out.finish()
    print(f"{len(tr.records)} applications, oracle checked {tr.checked}, mismatches {len(tr.mismatches)}")
    if tr.mismatches:
        raise OracleMismatch(tr.mismatches[0])
    return EXIT_OK


def _bytes_per_event(cfg: RunConfig) -> float:
    from .dataflow.messages import MsgKind
    from .dataflow.wire import encode_payload
    from .experiments import build_dataset
    from .stream import MiniBatch

    _, pairs = build_dataset(cfg)
    b = MiniBatch(1, tuple(pairs[: cfg.batch_size]), 0)
    return len(encode_payload(MsgKind.MINIBATCH, b)) / len(b)


def cmd_throughput(cfg: RunConfig, args) -> int:
    from .experiments import throughput
    from .stream import ThroughputReport

    if args.rates:
        cfg = cfg.override({"rates": args.rates})
    out = Output(args.out or cfg.out_dir, "throughput", cfg)
    cap, reports, sustained = throughput(cfg)
    out.csv("throughput.csv", ThroughputReport.CSV_HEADER, [r.row() for r in reports])
    bpe = _bytes_per_event(cfg)
    out.json(
        "capacity.json",
        {
            "capacity_estimate": round(cap, 1),
            "sustainable_capacity": sustained,
            "bytes_per_event": round(bpe, 2),
            "sustainable_mb_per_s": round(sustained * bpe / 1e6, 4),
            "clock": "virtual" if cfg.scheduler == "replay" else "wall",
        },
    )
    out.finish()
    print(f"capacity estimate {cap:.0f} events/s; highest sustainable offered rate {sustained:.0f}")
    return EXIT_OK


def cmd_drift(cfg: RunConfig, args) -> int:
    from .drift import DriftScenario
    from .experiments import drift

    scenario = None
    if args.scenario:
        try:
            scenario = DriftScenario.from_dict(json.loads(Path(args.scenario).read_text(encoding="utf-8")))
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad scenario file {args.scenario}: {exc}") from None
    out = Output(args.out or cfg.out_dir, "drift", cfg)
    res = drift(cfg, scenario)
    res.report.write_csv(out.path("drift.csv"))
    summary = res.report.summary()
    summary["identity_mean"] = res.identity.mean
    summary["noise_floor"] = res.noise_floor
    out.json("drift.json", summary)
    if scenario is not None:
        out.json("scenario.json", scenario.to_dict())
    out.finish()
    r = res.report
    print(f"mean cosine difference {r.mean:.4f}; shifted median {r.shifted_median:.4f}, others {r.unshifted_median:.4f}")
    print(f"no-drift mean {res.identity.mean:.4f} vs control noise floor {res.noise_floor:.4f}")
    return EXIT_OK


COMMANDS = {
    "run": (cmd_run, "one training run: loss curve and run metrics"),
    "converge": (cmd_converge, "loss curves for several rank counts against sequential SGD"),
    "speedup": (cmd_speedup, "examples/s and parallel efficiency per rank count and batch size"),
    "staleness": (cmd_staleness, "staleness log, histogram and replay-oracle check"),
    "throughput": (cmd_throughput, "sustainable throughput at several offered rates"),
    "drift": (cmd_drift, "synthetic concept drift and per-token cosine displacement"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _ArgParser(prog="airflux", description="Asynchronous stream-training experiments.")
    p.add_argument("--version", action="version", version=f"airflux {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_ArgParser)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", help="INI config file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", help="overrides the config file and AIRFLUX_SEED")
        s.add_argument("--learner")
        s.add_argument("--mode", help="asgd, sync or ssp:<k>")
        s.add_argument("--n-ranks", dest="n_ranks")
        s.add_argument("--scheduler", help="replay or threads")
        s.add_argument("--alpha")
        s.add_argument("--batch-size", dest="batch_size")
        s.add_argument("--alpha-scaling", dest="alpha_scaling", choices=["on", "off"])
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="any config key")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("converge", "speedup"):
            s.add_argument("--ranks", help="comma-separated rank counts")
        if name == "speedup":
            s.add_argument("--batch-sizes", dest="batch_sizes")
        if name == "throughput":
            s.add_argument("--rates", help="comma-separated offered rates (events/s)")
        if name == "drift":
            s.add_argument("--scenario", help="JSON drift scenario file")
    return p


def config_from_args(args, env=None) -> RunConfig:
    overrides = {}
    for k in ("seed", "learner", "mode", "n_ranks", "scheduler", "alpha", "batch_size", "alpha_scaling"):
        v = getattr(args, k, None)
        if v is not None:
            overrides[k] = v
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    return load_config(args.config, overrides, env)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = config_from_args(args)
        fn, _ = COMMANDS[args.command]
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OracleMismatch as exc:
        print(f"staleness oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except NonFiniteGradient as exc:
        print(f"non-finite gradient: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except Exception as exc:
        log.exception("failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
