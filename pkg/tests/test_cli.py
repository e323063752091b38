import json

import numpy as np
import pytest

from ultralbm.cli import main


def run(argv):
    return main(argv)


@pytest.fixture()
def dataset_dir(tmp_path):
    data_dir = tmp_path / "data"
    code = run(["gendata", "--count", "16", "--size", "64", "--seed", "0",
                "--out-dir", str(data_dir)])
    assert code == 0
    return data_dir


class TestGendata:
    def test_deterministic_outputs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["gendata", "--count", "4", "--size", "32", "--seed", "0",
                    "--out-dir", str(a)]) == 0
        assert run(["gendata", "--count", "4", "--size", "32", "--seed", "0",
                    "--out-dir", str(b)]) == 0
        for name in sorted(p.name for p in (a / "images").iterdir()):
            x = (a / "images" / name).read_bytes()
            y = (b / "images" / name).read_bytes()
            assert x == y


class TestTrainCommand:
    def test_smoke_train_writes_history(self, dataset_dir, tmp_path):
        out = tmp_path / "run"
        code = run([
            "train", "--data-dir", str(dataset_dir), "--out-dir", str(out),
            "--variant", "tiny", "--epochs", "1", "--image-size", "64",
            "--batch-size", "8", "--seed", "0",
        ])
        assert code == 0
        lines = (out / "history.csv").read_text().strip().splitlines()
        assert len(lines) == 2  # header + one epoch
        assert (out / "effective_config.json").exists()
        assert (out / "best.ckpt.npz").exists()

    def test_config_file_roundtrip(self, dataset_dir, tmp_path):
        out1 = tmp_path / "run1"
        code = run([
            "train", "--data-dir", str(dataset_dir), "--out-dir", str(out1),
            "--variant", "tiny", "--epochs", "1", "--image-size", "64", "--seed", "3",
        ])
        assert code == 0
        cfg_path = out1 / "effective_config.json"
        out2 = tmp_path / "run2"
        code = run(["train", "--config", str(cfg_path), "--out-dir", str(out2)])
        assert code == 0
        h1 = (out1 / "history.csv").read_text().splitlines()
        h2 = (out2 / "history.csv").read_text().splitlines()
        assert h1 == h2

    def test_unknown_config_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"epochz": 3}))
        assert run(["train", "--config", str(bad), "--data-dir", "x"]) == 2


class TestEvalPredict:
    def test_eval_missing_checkpoint_names_path(self, dataset_dir, capsys):
        code = run(["eval", "--checkpoint", "missing.ckpt",
                    "--data-dir", str(dataset_dir)])
        assert code != 0
        err = capsys.readouterr().err
        assert err.startswith("error:") and "missing.ckpt" in err
        assert len(err.strip().splitlines()) == 1

    def test_eval_and_predict_roundtrip(self, dataset_dir, tmp_path):
        run_dir = tmp_path / "run"
        assert run([
            "train", "--data-dir", str(dataset_dir), "--out-dir", str(run_dir),
            "--variant", "tiny", "--epochs", "1", "--image-size", "64", "--seed", "0",
        ]) == 0
        ckpt = run_dir / "best.ckpt.npz"

        eval_dir = tmp_path / "eval"
        assert run(["eval", "--checkpoint", str(ckpt), "--data-dir", str(dataset_dir),
                    "--image-size", "64", "--out-dir", str(eval_dir)]) == 0
        report = json.loads((eval_dir / "eval.json").read_text())
        assert 0.0 <= report["iou_mean"] <= 1.0

        pred_dir = tmp_path / "pred"
        assert run(["predict", "--checkpoint", str(ckpt), "--data-dir", str(dataset_dir),
                    "--image-size", "64", "--out-dir", str(pred_dir)]) == 0
        preds = sorted(pred_dir.glob("*_pred.png"))
        assert len(preds) == 16


class TestAnalyze:
    def test_full_variant_budgets(self, tmp_path):
        out = tmp_path / "a"
        assert run(["analyze", "--variant", "full", "--input-size", "256",
                    "--out-dir", str(out)]) == 0
        report = json.loads((out / "complexity.json").read_text())
        assert abs(report["total_params"] - 34_000) / 34_000 < 0.15
        assert report["flop_convention"] == "MAC"
        assert abs(report["flops_mac"] - 0.060e9) / 0.060e9 < 0.25

    def test_tiny_variant_budgets(self, tmp_path):
        out = tmp_path / "t"
        assert run(["analyze", "--variant", "tiny", "--input-size", "256",
                    "--out-dir", str(out)]) == 0
        report = json.loads((out / "complexity.json").read_text())
        assert abs(report["total_params"] - 11_000) / 11_000 < 0.20
        assert abs(report["flops_mac"] - 0.019e9) / 0.019e9 < 0.25


class TestGradcheckCommand:
    def test_gradcheck_passes(self, tmp_path):
        out = tmp_path / "g"
        assert run(["gradcheck", "--out-dir", str(out), "--seed", "0"]) == 0
        report = json.loads((out / "gradcheck.json").read_text())
        assert report["end_to_end"] < 1e-3
