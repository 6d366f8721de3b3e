"""Exit codes and output of the command-line interface."""

import json

import pytest

from dropback.cli import main
from dropback.harness import load_record

BASE_CONFIG = """\
network = dims:2,8,2
optimizer = sgd
dataset = synth:classes=2,dims=2,per_class=50,spread=0.02
epochs = 3
batch_size = 16
seed = 3
"""


def write_config(tmp_path, extra: str = "") -> str:
    tmp_path.mkdir(parents=True, exist_ok=True)
    path = tmp_path / "run.cfg"
    path.write_text(BASE_CONFIG + extra)
    return str(path)


def train_once(tmp_path, capsys, extra: str = "", sets=()) -> dict:
    cfg = write_config(tmp_path, extra)
    outdir = str(tmp_path / "out")
    argv = ["train", cfg, "--outdir", outdir]
    for item in sets:
        argv += ["--set", item]
    assert main(argv) == 0
    capsys.readouterr()
    return load_record(tmp_path / "out" / "record.json")


class TestTrain:
    def test_success_writes_record(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["train", cfg, "--outdir", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out
        assert "run finished" in out
        assert "best val error" in out
        record = load_record(tmp_path / "out" / "record.json")
        assert record["status"] == "ok"

    def test_set_overrides_config(self, tmp_path, capsys):
        record = train_once(tmp_path, capsys, sets=["epochs=1", "lr0=0.3"])
        assert record["epochs_run"] == 1
        assert record["config"]["lr0"] == 0.3

    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "warmup=5\n")
        assert main(["train", cfg]) == 1
        assert "config error" in capsys.readouterr().err

    def test_bad_set_value_is_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["train", cfg, "--set", "epochs=soon"]) == 1

    def test_missing_config_file_is_io_error(self, tmp_path, capsys):
        assert main(["train", str(tmp_path / "absent.cfg")]) == 3
        assert "io error" in capsys.readouterr().err

    def test_divergent_run_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        code = main(["train", cfg, "--outdir", str(tmp_path / "out"),
                     "--set", "lr0=1e6"])
        assert code == 2
        assert "training aborted" in capsys.readouterr().err
        assert load_record(tmp_path / "out" / "record.json")["status"] == "diverged"


class TestEval:
    def test_matches_recorded_best_error(self, tmp_path, capsys):
        record = train_once(tmp_path, capsys, sets=["epochs=4"])
        code = main(["eval", record["checkpoints"]["best"],
                     record["config"]["dataset"], "--split", "val"])
        assert code == 0
        out = capsys.readouterr().out
        assert f"val error {record['best_val_error']:.4f}" in out

    def test_default_split_is_val(self, tmp_path, capsys):
        record = train_once(tmp_path, capsys)
        assert main(["eval", record["checkpoints"]["final"],
                     record["config"]["dataset"]]) == 0
        assert "val error" in capsys.readouterr().out

    def test_missing_split_is_config_error(self, tmp_path, capsys):
        record = train_once(tmp_path, capsys)
        code = main(["eval", record["checkpoints"]["final"],
                     record["config"]["dataset"], "--split", "test"])
        assert code == 1

    def test_missing_checkpoint_is_io_error(self, tmp_path, capsys):
        assert main(["eval", str(tmp_path / "absent.ckpt"), "synth:"]) == 3

    def test_corrupt_checkpoint_is_io_error(self, tmp_path, capsys):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        assert main(["eval", str(path), "synth:"]) == 3


class TestCompare:
    def test_table_and_csv(self, tmp_path, capsys):
        train_once(tmp_path / "a", capsys)
        train_once(tmp_path / "b", capsys,
                   sets=["optimizer=dropback", "k=7"])
        csv_path = tmp_path / "compare.csv"
        code = main(["compare",
                     str(tmp_path / "a" / "out" / "record.json"),
                     str(tmp_path / "b" / "out" / "record.json"),
                     "--csv", str(csv_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "sgd" in out and "dropback" in out
        lines = csv_path.read_text().splitlines()
        assert lines[0].startswith("run,optimizer,val_error")
        assert len(lines) == 3

    def test_missing_record_is_io_error(self, tmp_path, capsys):
        assert main(["compare", str(tmp_path / "absent.json")]) == 3

    def test_malformed_record_is_io_error(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["compare", str(path)]) == 3


class TestInspect:
    def test_dropback_checkpoint_shows_retention(self, tmp_path, capsys):
        record = train_once(tmp_path, capsys,
                            sets=["optimizer=dropback", "k=7"])
        assert main(["inspect", record["checkpoints"]["final"]]) == 0
        out = capsys.readouterr().out
        assert "kind: dropback" in out
        assert "capacity k: 7" in out
        assert "fc1" in out and "fc2" in out

    def test_dense_checkpoint(self, tmp_path, capsys):
        record = train_once(tmp_path, capsys)
        assert main(["inspect", record["checkpoints"]["final"]]) == 0
        out = capsys.readouterr().out
        assert "kind: sgd" in out
        assert "dense params: 42" in out


class TestReport:
    def test_renders_figures(self, tmp_path, capsys):
        train_once(tmp_path / "a", capsys,
                   sets=["snapshot_every=3", "diffusion_every=2"])
        train_once(tmp_path / "b", capsys,
                   sets=["optimizer=dropback", "k=7",
                         "snapshot_every=3", "diffusion_every=2"])
        out_dir = tmp_path / "figs"
        code = main(["report", str(tmp_path / "a" / "out"),
                     str(tmp_path / "b" / "out"), "--out", str(out_dir)])
        assert code == 0
        names = {p.name for p in out_dir.iterdir()}
        assert {"convergence.png", "churn.png", "diffusion.png",
                "histogram.png", "pca3d.png", "pca.csv"} <= names
        with open(out_dir / "pca.csv") as fh:
            header = fh.readline().strip()
        assert header == "run_id,step,c1,c2,c3"

    def test_missing_run_dir_is_io_error(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "absent"),
                     "--out", str(tmp_path / "figs")]) == 3


class TestUsage:
    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 1

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "train" in capsys.readouterr().out
