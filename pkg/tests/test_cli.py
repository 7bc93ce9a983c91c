import hashlib
import json
import os

import numpy as np
import pytest

from airflux import cli
from airflux.config import RunConfig, load_config
from airflux.errors import ConfigError
from airflux.experiments import InsufficientCores

SMALL = """\
[run]
batch_size = 16
[learner]
vocab_size = 60
dim = 8
[data]
n_topics = 3
n_sentences = 80
sentence_len = 6
examples = 400
[experiment]
ranks = 1, 2
batch_sizes = 16
speedup_batches = 20
virtual_window_s = 0.002
[drift]
drift_vocab_size = 40
drift_topics = 2
drift_sentences = 200
drift_time = 100
pre_passes = 1
post_passes = 1
"""

COMMANDS = ["run", "converge", "speedup", "staleness", "throughput", "drift"]


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


# -- config ---------------------------------------------------------------------


def test_ini_roundtrip():
    cfg = RunConfig(n_ranks=3, alpha=0.125, ranks=(1, 3), rates=(10.0, 2.5), alpha_scaling=True)
    back = RunConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert "[learner]" in cfg.to_ini() and "alpha = 0.125" in cfg.to_ini()


def test_precedence(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nseed = 5\nn_ranks = 2\n")
    assert load_config(p, env={}).seed == 5
    assert load_config(p, env={"AIRFLUX_SEED": "7"}).seed == 7
    cfg = load_config(p, {"seed": "9"}, env={"AIRFLUX_SEED": "7"})
    assert cfg.seed == 9 and cfg.n_ranks == 2
    assert load_config(None, env={}).seed == 0


@pytest.mark.parametrize(
    "text",
    [
        "[run]\nbogus = 1\n",
        "[learner]\nseed = 1\n",
        "[run]\nn_ranks = two\n",
        "[run]\nmode = sync\nn_ranks = 2\n",
        "[run]\nmode = ssp:0\n",
        "[run]\nalpha_scaling = maybe\n",
        "not an ini file",
    ],
)
def test_bad_config(text):
    with pytest.raises(ConfigError):
        RunConfig.from_ini(text)


def test_effective_alpha():
    assert RunConfig(alpha=0.01, n_ranks=4, alpha_scaling=True).effective_alpha == pytest.approx(0.04)
    assert RunConfig(alpha=0.01, n_ranks=4).effective_alpha == 0.01


# -- exit codes -----------------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--mode", "nonsense"],
        ["run", "--n-ranks", "2", "--mode", "sync"],
        ["run", "--set", "nokey=1"],
        ["run", "--set", "noequals"],
        ["frobnicate"],
        ["run", "--config", "/nonexistent/c.ini"],
    ],
)
def test_config_errors_exit_2(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)] if argv[0] == "run" else argv) == 2


def test_oracle_mismatch_exit_3(small, tmp_path, monkeypatch):
    import airflux.experiments as ex

    monkeypatch.setattr(ex, "replay_staleness_oracle", lambda reps: (1, ["forced"]))
    assert cli.main(["staleness", "--config", str(small), "--out", str(tmp_path), "--n-ranks", "2"]) == 3


def test_nonfinite_exit_4(tmp_path):
    argv = ["run", "--learner", "quadratic", "--alpha", "1e38", "--set", "dim=4", "--set", "examples=512", "--out", str(tmp_path)]
    with np.errstate(over="ignore"):
        assert cli.main(argv) == 4


# -- artifacts ------------------------------------------------------------------


def test_run_artifacts(small, tmp_path, capsys):
    assert cli.main(["run", "--config", str(small), "--out", str(tmp_path), "--n-ranks", "2"]) == 0
    assert "final loss" in capsys.readouterr().out
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "run" and man["config"]["n_ranks"] == 2
    assert set(man["artifacts"]) == {"loss.csv", "metrics.json", "config.ini"}
    for name, digest in man["artifacts"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "batch_id,loss"
    # the echoed config reproduces the run
    again = tmp_path / "again"
    assert cli.main(["run", "--config", str(tmp_path / "config.ini"), "--out", str(again)]) == 0
    assert (again / "loss.csv").read_bytes() == (tmp_path / "loss.csv").read_bytes()


def test_converge_single_rank_matches(small, tmp_path):
    assert cli.main(["converge", "--config", str(small), "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["single_rank_matches_sequential"] is True
    assert (tmp_path / "loss_n1.csv").read_bytes() != b""


def test_staleness_log_schema(small, tmp_path):
    assert cli.main(["staleness", "--config", str(small), "--out", str(tmp_path), "--n-ranks", "3"]) == 0
    first = json.loads((tmp_path / "staleness.jsonl").read_text().splitlines()[0])
    assert set(first) == {"applier", "origin", "origin_seq", "staleness", "wall_ts"}


@pytest.mark.parametrize("command", COMMANDS)
def test_reruns_are_byte_identical(command, small, tmp_path):
    argv = [command, "--config", str(small), "--n-ranks", "2", "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(argv + ["--out", str(a)]) == 0
    assert cli.main(argv + ["--out", str(b)]) == 0
    assert files(a) == files(b)


def test_drift_scenario_file(small, tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({"vocab_size": 40, "n_topics": 2, "n_sentences": 200, "drift_time": 100, "shift": {"0": 1}}))
    out = tmp_path / "out"
    assert cli.main(["drift", "--config", str(small), "--out", str(out), "--scenario", str(scen)]) == 0
    assert json.loads((out / "scenario.json").read_text())["shift"] == {"0": 1}
    scen.write_text("{not json")
    assert cli.main(["drift", "--config", str(small), "--out", str(out), "--scenario", str(scen)]) == 2


@pytest.mark.skipif((os.cpu_count() or 1) >= 8, reason="needs fewer cores than ranks")
def test_insufficient_cores_warning(small, tmp_path):
    with pytest.warns(InsufficientCores):
        from airflux.experiments import check_cores

        check_cores(os.cpu_count() + 1)
    argv = ["speedup", "--config", str(small), "--out", str(tmp_path), "--scheduler", "threads", "--ranks", "8"]
    argv += ["--set", "speedup_batches=5"]
    with pytest.warns(InsufficientCores):
        assert cli.main(argv) == 0
