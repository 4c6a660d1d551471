import json
import os

import numpy as np
import pytest

from conftest import make_ntu_text
from skelgcn.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from skelgcn.dataio import read_dataset
from skelgcn.network import BlockConfig, NetworkConfig
from skelgcn.topology import topology_to_csv  # noqa: F401  (import sanity)


def tiny_train_json(path, epochs=1):
    cfg = {
        "network": NetworkConfig(
            blocks=[BlockConfig(3, 4, 1, 1)],
            n_classes=2,
            skeleton="toy9",
            target_frames=4,
            reduction_min=2,
        ).to_dict(),
        "lr": 0.01,
        "epochs": epochs,
        "batch_size": 4,
    }
    with open(path, "w") as f:
        json.dump(cfg, f)
    return path


@pytest.fixture
def dataset(tmp_path):
    path = str(tmp_path / "data.jsonl")
    code = main(
        [
            "gen-data",
            "--out", path,
            "--skeleton", "toy9",
            "--classes", "2",
            "--per-class", "3",
            "--frames", "4",
            "--seed", "0",
        ]
    )
    assert code == EXIT_OK
    return path


class TestGenData:
    def test_writes_dataset(self, dataset):
        seqs = read_dataset(dataset)
        assert len(seqs) == 6

    def test_seed_required(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as e:
            main(["gen-data", "--out", str(tmp_path / "x.jsonl")])
        assert e.value.code == EXIT_USAGE


class TestTrainEval:
    def test_end_to_end(self, dataset, tmp_path, capsys):
        cfg = tiny_train_json(str(tmp_path / "cfg.json"))
        out_dir = str(tmp_path / "run")
        code = main(
            ["train", "--config", cfg, "--data", dataset, "--out-dir", out_dir, "--seed", "0"]
        )
        assert code == EXIT_OK
        assert os.path.exists(os.path.join(out_dir, "checkpoint.bin"))
        assert os.path.exists(os.path.join(out_dir, "metrics.csv"))

        code = main(
            ["eval", "--ckpt", os.path.join(out_dir, "checkpoint.bin"), "--data", dataset]
        )
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "accuracy:" in out
        assert "confusion" in out

    def test_set_override(self, dataset, tmp_path, capsys):
        cfg = tiny_train_json(str(tmp_path / "cfg.json"))
        out_dir = str(tmp_path / "run2")
        code = main(
            [
                "train",
                "--config", cfg,
                "--data", dataset,
                "--out-dir", out_dir,
                "--seed", "1",
                "--set", "epochs=2",
            ]
        )
        assert code == EXIT_OK
        lines = open(os.path.join(out_dir, "metrics.csv")).read().strip().split("\n")
        assert len(lines) == 3  # header + 2 epochs

    def test_missing_data_file_is_runtime_error(self, tmp_path, capsys):
        cfg = tiny_train_json(str(tmp_path / "cfg.json"))
        code = main(
            [
                "train",
                "--config", cfg,
                "--data", str(tmp_path / "nope.jsonl"),
                "--out-dir", str(tmp_path / "r"),
                "--seed", "0",
            ]
        )
        assert code == EXIT_RUNTIME


class TestExportTopology:
    def test_writes_csv_and_pgm(self, dataset, tmp_path, capsys):
        cfg = tiny_train_json(str(tmp_path / "cfg.json"))
        out_dir = str(tmp_path / "run")
        main(["train", "--config", cfg, "--data", dataset, "--out-dir", out_dir, "--seed", "0"])
        exp_dir = str(tmp_path / "topo")
        code = main(
            [
                "export-topology",
                "--ckpt", os.path.join(out_dir, "checkpoint.bin"),
                "--data", dataset,
                "--block", "0",
                "--out-dir", exp_dir,
            ]
        )
        assert code == EXIT_OK
        csv_path = os.path.join(exp_dir, "block0_topology.csv")
        pgm_path = os.path.join(exp_dir, "block0_topology.pgm")
        assert os.path.exists(csv_path)
        with open(pgm_path, "rb") as f:
            header = f.readline()
            dims = f.readline().split()
            f.readline()
            pixels = f.read()
        assert header == b"P5\n"
        assert [int(d) for d in dims] == [9, 9]
        assert len(pixels) == 81

    def test_invalid_block_is_runtime_error(self, dataset, tmp_path, capsys):
        cfg = tiny_train_json(str(tmp_path / "cfg.json"))
        out_dir = str(tmp_path / "run")
        main(["train", "--config", cfg, "--data", dataset, "--out-dir", out_dir, "--seed", "0"])
        code = main(
            [
                "export-topology",
                "--ckpt", os.path.join(out_dir, "checkpoint.bin"),
                "--data", dataset,
                "--block", "7",
                "--out-dir", str(tmp_path / "t2"),
            ]
        )
        assert code == EXIT_RUNTIME


class TestParseSkeleton:
    def test_parse_and_convert(self, tmp_path, capsys):
        frames = np.round(np.random.default_rng(0).normal(size=(2, 25, 3)), 5)
        src = str(tmp_path / "S001C001P001R001A005.skeleton")
        with open(src, "w") as f:
            f.write(make_ntu_text(frames))
        out = str(tmp_path / "conv.jsonl")
        code = main(["parse-skeleton", "--file", src, "--out", out])
        assert code == EXIT_OK
        seqs = read_dataset(out)
        assert len(seqs) == 1
        assert seqs[0].label == 4
        assert np.array_equal(seqs[0].frames, frames)

    def test_malformed_file_is_runtime_error(self, tmp_path, capsys):
        src = str(tmp_path / "bad.skeleton")
        with open(src, "w") as f:
            f.write("not a skeleton\n")
        assert main(["parse-skeleton", "--file", src]) == EXIT_RUNTIME


class TestDescribe:
    def test_prints_parameter_table(self, capsys):
        code = main(["describe", "--classes", "4"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "head.w" in out
        assert "total" in out


class TestGradCheckCommand:
    def test_ops_scope_passes(self, capsys):
        code = main(["grad-check", "--scope", "ops", "--seeds", "1"])
        assert code == EXIT_OK
        assert "PASS" in capsys.readouterr().out

    def test_unknown_scope_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["grad-check", "--scope", "everything"])
        assert e.value.code == EXIT_USAGE
