import json
import time

import numpy as np
import pytest

from vitforge.cli import TEST_LINE, RunConfig, main
from vitforge.data import scan_dataset

FIVE_LABELS = ["Memory Used:", "Forward Pass Time per Batch:", "Backward Pass Time per Batch:",
               "Training Time per Epoch:", "Inference Time per Batch:"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(small_dataset, tmp_path_factory):
    """A tiny model trained until it fits the synthetic train split."""
    out = tmp_path_factory.mktemp("trained")
    code = main(["train", "--data", str(small_dataset), "--size", "tiny", "--epochs", "8",
                 "--lr", "1e-3", "--batch-size", "8", "--seed", "1", "--out", str(out)])
    assert code == 0
    return out


# --- scan ---------------------------------------------------------------------

def test_scan_counts(capsys, small_dataset, tmp_path):
    code, out, _ = run(capsys, "scan", small_dataset, "--out", tmp_path)
    assert code == 0
    assert out.splitlines() == [
        "train: fire 16, nofire 16 (total 32)",
        "val: fire 8, nofire 8 (total 16)",
        "test: fire 8, nofire 8 (total 16)",
    ]
    for split, n in (("train", 32), ("val", 16), ("test", 16)):
        manifest = json.loads((tmp_path / f"manifest_{split}.json").read_text())
        assert len(manifest["entries"]) == n == len(scan_dataset(small_dataset, split))


def test_scan_json(capsys, small_dataset, tmp_path):
    code, out, _ = run(capsys, "scan", small_dataset, "--out", tmp_path, "--json")
    assert code == 0
    assert json.loads(out)["test"]["classes"] == {"fire": 8, "nofire": 8}


def test_scan_empty_root(capsys, tmp_path):
    code, _, err = run(capsys, "scan", tmp_path, "--out", tmp_path / "o")
    assert code == 1
    assert "<root>/<split>/<class_name>" in err


# --- train --------------------------------------------------------------------

def test_train_artifacts(trained):
    lines = (trained / "curves.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(lines) == 9
    assert (trained / "checkpoint.vitf").exists()
    assert len((trained / "epochs.jsonl").read_text().splitlines()) == 8
    assert RunConfig.from_dict(json.loads((trained / "config.json").read_text())).epochs == 8


def _train(out, data, *extra):
    return main(["train", "--data", str(data), "--epochs", "2", "--batch-size", "8", "--lr", "1e-3",
                 "--seed", "4", "--out", str(out), *map(str, extra)])


def test_train_smoke_and_determinism(capsys, small_dataset, tmp_path):
    assert _train(tmp_path / "a", small_dataset) == 0
    out_a = capsys.readouterr().out
    assert _train(tmp_path / "b", small_dataset) == 0
    out_b = capsys.readouterr().out
    assert out_a == out_b
    assert out_a.splitlines()[0].startswith("Epoch [1/2] -> Train Loss: ")
    for name in ("curves.csv", "checkpoint.vitf", "epochs.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_json(capsys, small_dataset, tmp_path):
    assert _train(tmp_path, small_dataset, "--json") == 0
    payload = json.loads(capsys.readouterr().out)
    assert [e["epoch"] for e in payload["epochs"]] == [1, 2]


def test_train_from_init(capsys, small_dataset, trained, tmp_path):
    assert _train(tmp_path, small_dataset, "--init", trained / "checkpoint.vitf") == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert "Train Acc: 100.00%" in first


# --- eval ---------------------------------------------------------------------

def test_test_line_golden():
    assert TEST_LINE.format(loss=0.1237, acc=96.10) == "Test Loss: 0.1237, Test Accuracy: 96.10%"


def test_eval_output_and_artifacts(capsys, small_dataset, trained, tmp_path):
    args = ["eval", "--checkpoint", trained / "checkpoint.vitf", "--data", small_dataset, "--out", tmp_path]
    code, out, _ = run(capsys, *args)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("Test Loss: ") and "Test Accuracy: " in lines[0]
    assert "Classification Report:" in out and "macro avg" in out and "weighted avg" in out
    assert "Confusion Matrix" in out and lines[-1].startswith("ROC-AUC: ")
    metrics = json.loads((tmp_path / "metrics_test.json").read_text())
    assert len(metrics["predictions"]) == 16
    first_bytes = (tmp_path / "metrics_test.json").read_bytes()
    code, out2, _ = run(capsys, *args)
    assert out2 == out and (tmp_path / "metrics_test.json").read_bytes() == first_bytes


def test_eval_overfit_train_split(capsys, small_dataset, trained, tmp_path):
    code, out, _ = run(capsys, "eval", "--checkpoint", trained / "checkpoint.vitf", "--data", small_dataset,
                       "--split", "train", "--out", tmp_path)
    assert code == 0
    assert out.splitlines()[0].endswith("Test Accuracy: 100.00%")


def test_eval_json(capsys, small_dataset, trained, tmp_path):
    code, out, _ = run(capsys, "eval", "--checkpoint", trained / "checkpoint.vitf", "--data", small_dataset,
                       "--out", tmp_path, "--json")
    d = json.loads(out)
    assert code == 0 and set(d) == {"split", "loss", "accuracy_percent", "report"}


def test_eval_class_mismatch(capsys, small_dataset, trained, tmp_path):
    from vitforge.synthetic import make_dataset
    other = make_dataset(tmp_path / "d", {"test": 2}, size=32)
    (other / "test" / "nofire").rename(other / "test" / "smoke")
    code, _, err = run(capsys, "eval", "--checkpoint", trained / "checkpoint.vitf", "--data", other,
                       "--out", tmp_path)
    assert code == 2 and "classes" in err


def test_eval_bad_checkpoint(capsys, small_dataset, tmp_path):
    bad = tmp_path / "bad.vitf"
    bad.write_bytes(b"not a checkpoint at all")
    code, _, err = run(capsys, "eval", "--checkpoint", bad, "--data", small_dataset, "--out", tmp_path)
    assert code == 2 and "magic" in err


# --- predict ------------------------------------------------------------------

def test_predict_matches_eval(capsys, small_dataset, trained, tmp_path):
    run(capsys, "eval", "--checkpoint", trained / "checkpoint.vitf", "--data", small_dataset, "--out", tmp_path)
    records = json.loads((tmp_path / "metrics_test.json").read_text())["predictions"]
    for rec in records[::5]:
        code, out, _ = run(capsys, "predict", "--checkpoint", trained / "checkpoint.vitf", rec["path"])
        assert code == 0
        probs = [float(line.split(": ")[1]) for line in out.splitlines()[:2]]
        assert abs(sum(probs) - 1) < 1e-5
        expected = ["fire", "nofire"][int(np.argmax(rec["logits"]))]
        assert out.splitlines()[2].startswith(f"Predicted: {expected} (")
        code, out2, _ = run(capsys, "predict", "--checkpoint", trained / "checkpoint.vitf", rec["path"], "--json")
        d = json.loads(out2)
        assert abs(sum(d["probs"].values()) - 1) < 1e-6 and d["label"] == expected


def test_predict_decode_failure(capsys, trained, tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"\x89PNG garbage")
    code, _, err = run(capsys, "predict", "--checkpoint", trained / "checkpoint.vitf", bad)
    assert code == 2 and "broken.png" in err


# --- profile ------------------------------------------------------------------

def test_profile_tiny(capsys, tmp_path):
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "profile", "--size", "tiny", "--batch-size", "8", "--out", tmp_path)
    assert time.perf_counter() - t0 < 60
    assert code == 0
    for label in FIVE_LABELS:
        assert any(line.startswith(label) for line in out.splitlines())
    d = json.loads((tmp_path / "profile.json").read_text())
    for key in ("forward_s_per_batch", "backward_s_per_batch", "train_s_per_epoch",
                "inference_s_per_batch", "memory_mb", "environment", "samples"):
        assert key in d
    assert d["batches_per_epoch"] == 189  # 1509 images at batch 8
    assert len(d["samples"]["forward"]) == 10


def test_profile_json_on_real_data(capsys, small_dataset, tmp_path):
    code, out, _ = run(capsys, "profile", "--data", small_dataset, "--batch-size", "8", "--timed", "2",
                       "--warmup", "1", "--json", "--out", tmp_path)
    assert code == 0
    assert json.loads(out)["batches_per_epoch"] == 4


# --- config handling ----------------------------------------------------------

def test_print_config_round_trip(capsys, tmp_path):
    code, out, _ = run(capsys, "train", "--data", "x", "--epochs", "3", "--print-config")
    assert code == 0
    cfg = json.loads(out)
    assert cfg["epochs"] == 3 and cfg["data"] == "x"
    (tmp_path / "c.json").write_text(out)
    code, out2, _ = run(capsys, "train", "--config", tmp_path / "c.json", "--print-config")
    assert out2 == out
    code, out3, _ = run(capsys, "train", "--config", tmp_path / "c.json", "--epochs", "5", "--print-config")
    assert json.loads(out3)["epochs"] == 5


def test_unknown_config_key(capsys, tmp_path):
    (tmp_path / "c.json").write_text('{"epochz": 3}')
    code, _, err = run(capsys, "train", "--config", tmp_path / "c.json")
    assert code == 1 and "epochz" in err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["train", "--epochs", "many"]])
def test_usage_errors_exit_1(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_bad_thread_env(capsys, monkeypatch, small_dataset, tmp_path):
    monkeypatch.setenv("VITFORGE_THREADS", "lots")
    code, _, err = run(capsys, "scan", small_dataset, "--out", tmp_path)
    assert code == 1 and "VITFORGE_THREADS" in err
