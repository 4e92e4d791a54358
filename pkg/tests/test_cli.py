import csv
import json
from pathlib import Path

import numpy as np
import pytest

import humancm.cli as cli
from humancm.config import DEFAULTS, dump_config, load_config, parse_config
from humancm.errors import ConfigError, NumericalError
from humancm.formats import SampleSet, load_dataset, save_samples
from humancm.motion import stack_tasks

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMOKE = str(CONFIGS / "smoke.cfg")


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    d = tmp_path_factory.mktemp("smoke")
    assert run("gen-data", "--config", SMOKE, "--out", d / "data.bin") == 0
    assert run("train-teacher", "--config", SMOKE, "--data", d / "data.bin", "--out", d / "teacher.ck") == 0
    assert run("distill", "--config", SMOKE, "--data", d / "data.bin", "--teacher", d / "teacher.ck",
               "--out", d / "student.ck") == 0
    return d


# --- config ----------------------------------------------------------------------------


def test_config_defaults_follow_published_hyperparameters():
    cfg = load_config(None)
    assert cfg["optim.lr"] == 0.0003 and cfg["optim.decay_factor"] == 0.9 and cfg["optim.decay_every"] == 75
    assert (cfg["consistency.w_min"], cfg["consistency.w_max"]) == (0.0, 1.0)
    assert cfg["consistency.w_star"] == pytest.approx(1 / 125)
    assert cfg["consistency.lambda"] == pytest.approx(1 / 15)
    assert (cfg["data.n_sequences"], cfg["data.n_test"]) == (512, 64)


def test_config_parsing():
    cfg = parse_config("# comment\nconsistency.lambda = 1/15  # trailing\n\ndata.motion_families=walker,turn\n")
    assert cfg["consistency.lambda"] == pytest.approx(1 / 15)
    assert cfg["data.motion_families"] == ("walker", "turn")
    assert parse_config(dump_config(cfg)).values == cfg.values


@pytest.mark.parametrize("text,key", [
    ("data.n_sequences=0", "data.n_sequences"),
    ("nope=1", "nope"),
    ("arch.model_dim=abc", "arch.model_dim"),
    ("consistency.rho=2", "consistency.rho"),
    ("consistency.k=100", "consistency.k"),
    ("arch.n_heads=3", "arch.n_heads"),
    ("data.motion_families=spin", "data.motion_families"),
    ("just text", "line 1"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key


def test_shipped_profiles_parse():
    for name in ("desk.cfg", "smoke.cfg"):
        load_config(CONFIGS / name)
    desk = load_config(CONFIGS / "desk.cfg")
    assert desk.schedule().N == 100 and desk.arch().model_dim == 64
    assert set(DEFAULTS) >= set(desk.values)


# --- subcommands -----------------------------------------------------------------------


def test_gen_data_counts_and_determinism(smoke, tmp_path):
    ds = load_dataset(smoke / "data.bin")
    assert (len(ds.train), len(ds.test)) == (32, 4)
    assert run("gen-data", "--config", SMOKE, "--out", tmp_path / "again.bin") == 0
    assert (tmp_path / "again.bin").read_bytes() == (smoke / "data.bin").read_bytes()


def test_default_dataset_size(tmp_path):
    assert run("gen-data", "--out", tmp_path / "d.bin") == 0
    ds = load_dataset(tmp_path / "d.bin")
    assert (len(ds.train), len(ds.test)) == (512, 64)


def test_training_is_byte_deterministic(smoke, tmp_path):
    assert run("train-teacher", "--config", SMOKE, "--data", smoke / "data.bin", "--out", tmp_path / "t.ck") == 0
    assert (tmp_path / "t.ck").read_bytes() == (smoke / "teacher.ck").read_bytes()
    assert run("distill", "--config", SMOKE, "--data", smoke / "data.bin", "--teacher", smoke / "teacher.ck",
               "--out", tmp_path / "s.ck") == 0
    assert (tmp_path / "s.ck").read_bytes() == (smoke / "student.ck").read_bytes()


def test_loss_csv(smoke):
    rows = list(csv.DictReader(open(smoke / "teacher.ck.loss.csv")))
    assert list(rows[0]) == ["epoch", "lr", "loss"]
    assert rows[0]["lr"] == "0.0003" and len(rows) == 2


def test_loss_csv_decay_row(tmp_path):
    from humancm.optim import LossHistory, OptimConfig, lr_at

    h = LossHistory()
    for e in range(151):
        h.log_epoch(e, lr_at(OptimConfig().schedule, e), [1.0])
    rows = list(csv.DictReader(h.to_csv().splitlines()))
    assert rows[75]["lr"] == "0.00027" and rows[150]["lr"] == "0.000243"


def test_sample_and_eval(smoke, tmp_path, capsys):
    capsys.readouterr()
    assert run("sample", "--checkpoint", smoke / "student.ck", "--data", smoke / "data.bin", "--k", 5,
               "--out", tmp_path / "s.smp") == 0
    assert "network_evals=20" in capsys.readouterr().out
    assert run("sample", "--checkpoint", smoke / "teacher.ck", "--data", smoke / "data.bin", "--k", 5, "--steps", 20,
               "--out", tmp_path / "t.smp") == 0
    assert "network_evals=400" in capsys.readouterr().out
    assert run("eval", "--samples", tmp_path / "s.smp", "--data", smoke / "data.bin", "--out", tmp_path / "m.json") == 0
    report = json.loads((tmp_path / "m.json").read_text())
    assert list(report) == ["ade", "fde", "mmade", "mmfde", "samples", "network_evals", "wall_seconds"]
    assert report["samples"] == 5 and report["network_evals"] == 20
    assert (tmp_path / "m.json.csv").read_text().splitlines()[0] == ",".join(report)


def test_eval_of_ground_truth_copies_is_zero(smoke, tmp_path):
    ds = load_dataset(smoke / "data.bin")
    hist, fut = stack_tasks(ds.test)
    save_samples(tmp_path / "gt.smp", SampleSet(np.repeat(fut[:, None], 3, axis=1), hist.shape[1]))
    assert run("eval", "--samples", tmp_path / "gt.smp", "--data", smoke / "data.bin", "--out", tmp_path / "m.json") == 0
    report = json.loads((tmp_path / "m.json").read_text())
    assert report["ade"] == 0.0 and report["fde"] == 0.0


def test_eval_item_mismatch(smoke, tmp_path):
    save_samples(tmp_path / "few.smp", SampleSet(np.zeros((2, 1, 20, 15)), 10))
    assert run("eval", "--samples", tmp_path / "few.smp", "--data", smoke / "data.bin") == 3


def test_bench_csv(smoke, tmp_path):
    assert run("bench", "--config", SMOKE, "--teacher", smoke / "teacher.ck", "--student", smoke / "student.ck",
               "--data", smoke / "data.bin", "--out", tmp_path / "b.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert list(rows[0]) == ["model", "steps", "network_evals", "wall_seconds_median", "ade"]
    # smoke schedule has N=20, so only the 10-step teacher row applies
    assert [(r["model"], r["steps"]) for r in rows] == [("teacher", "10"), ("student", "1")]
    assert int(rows[0]["network_evals"]) == 10 * int(rows[1]["network_evals"])


def test_exit_codes(smoke, tmp_path, monkeypatch):
    bad = tmp_path / "bad.cfg"
    bad.write_text("data.n_sequences=0\n")
    assert run("gen-data", "--config", bad, "--out", tmp_path / "x.bin") == 2
    assert not (tmp_path / "x.bin").exists()
    assert run("gen-data", "--config", tmp_path / "missing.cfg", "--out", tmp_path / "x.bin") == 2
    # kind mismatch
    assert run("sample", "--checkpoint", smoke / "teacher.ck", "--data", smoke / "data.bin", "--expect", "student",
               "--out", tmp_path / "x.smp") == 3
    assert run("distill", "--config", SMOKE, "--data", smoke / "data.bin", "--teacher", smoke / "student.ck",
               "--out", tmp_path / "x.ck") == 3
    # student architecture differs from the teacher's
    wide = tmp_path / "wide.cfg"
    wide.write_text(Path(SMOKE).read_text() + "arch.model_dim=32\n")
    assert run("distill", "--config", wide, "--data", smoke / "data.bin", "--teacher", smoke / "teacher.ck",
               "--out", tmp_path / "x.ck") == 3

    def diverge(*a, **k):
        raise NumericalError("non-finite loss nan")

    monkeypatch.setattr(cli, "train_teacher", diverge)
    assert run("train-teacher", "--config", SMOKE, "--data", smoke / "data.bin", "--out", tmp_path / "x.ck") == 4
