import subprocess
import sys

import pytest
from conftest import TINY, run_pipeline

from tracksorter.cli import main
from tracksorter.config import KEYS, RunConfig
from tracksorter.decoder import DecodeResult, write_decodes
from tracksorter.evaluator import EfficiencyTable
from tracksorter.sequences import load_dataset


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run_pipeline(out, TINY) == 0
    return out


def test_pipeline_writes_every_artifact(tiny_run):
    for rel in ("data/detectors.csv", "tracks/train.csv", "tracks/modules.csv", "vocab.txt",
                "datasets/train.txt", "datasets/test.txt", "embed.bin", "embed_log.csv", "checkpoint.bin",
                "train_log.csv", "decodes.txt", "efficiency.csv", "efficiency.svg"):
        assert (tiny_run / rel).stat().st_size > 0, rel
    assert len((tiny_run / "decodes.txt").read_text().splitlines()) == 10
    assert (tiny_run / "efficiency.svg").read_text().lstrip().startswith("<?xml")


def test_stage_config_echo(tiny_run):
    echoed = RunConfig.load(tiny_run / "config.train.txt")
    assert echoed["train.epochs"] == 2 and echoed["model.d_model"] == 8
    assert set(echoed.values) == set(KEYS)


def test_eval_reports_every_bin_type(tiny_run):
    table = EfficiencyTable.read_csv(tiny_run / "efficiency.csv")
    assert table.overall.total == 20
    assert sum(r.total for r in table.by_type("length")) == 20
    assert sum(r.total for r in table.by_type("pt")) == 20


def test_decode_independent_of_workers(tiny_run, tmp_path):
    before = (tiny_run / "decodes.txt").read_bytes()
    assert main(["decode", "--out", str(tiny_run), "--workers", "2", *sum((["--set", s] for s in TINY), [])]) == 0
    assert (tiny_run / "decodes.txt").read_bytes() == before


def test_perfect_decodes_at_threshold_one(tiny_run, tmp_path):
    import shutil

    run = tmp_path / "r"
    (run / "datasets").mkdir(parents=True)
    shutil.copy(tiny_run / "datasets" / "test.txt", run / "datasets" / "test.txt")
    write_decodes([DecodeResult(list(e.target)) for e in load_dataset(run / "datasets" / "test.txt")],
                  run / "decodes.txt")
    assert main(["eval", "--out", str(run), "--set", "eval.threshold=1.0"]) == 0
    assert EfficiencyTable.read_csv(run / "efficiency.csv").overall.efficiency == 1.0


def test_missing_input_exit_code(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error stage=train kind=missing-input message=")


def test_unknown_key_rejected(tmp_path, capsys):
    assert main(["toy-gen", "--out", str(tmp_path), "--set", "model.d_modle=8"]) == 2
    assert "kind=config" in capsys.readouterr().err
    assert main(["toy-gen", "--out", str(tmp_path), "--set", "train.epochs=many"]) == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\ntoy.n_train = 4\n\ntoy.n_val=2\ntoy.n_test = 2\n")
    assert main(["toy-gen", "--out", str(tmp_path / "r"), "--config", str(cfg)]) == 0
    assert RunConfig.load(tmp_path / "r" / "config.toy-gen.txt")["toy.n_train"] == 4
    bad = tmp_path / "bad.txt"
    bad.write_text("no equals sign\n")
    assert main(["toy-gen", "--out", str(tmp_path / "r"), "--config", str(bad)]) == 2


def test_show_config_lists_all_keys(capsys):
    assert main(["show-config"]) == 0
    out = capsys.readouterr().out
    assert all(f"\n{k} = " in "\n" + out for k in KEYS)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tracksorter", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "build-vocab" in proc.stdout
