import csv
import json
import subprocess
import sys

import pytest

from auxseg.cli import main, verify_manifest


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--seed", 7, "--train", 16, "--val", 8, "--height", 16, "--width", 16,
               "--out", out) == 0
    return out


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gen_data_is_reproducible(data_dir, tmp_path):
    assert run("gen-data", "--seed", 7, "--train", 16, "--val", 8, "--height", 16, "--width", 16,
               "--out", tmp_path) == 0
    a = json.loads((data_dir / "manifest.json").read_text())["datasets"]
    b = json.loads((tmp_path / "manifest.json").read_text())["datasets"]
    assert {k: v["sha256"] for k, v in a.items()} == {k: v["sha256"] for k, v in b.items()}
    assert verify_manifest(tmp_path / "manifest.json") == []


def test_manifest_detects_tampering(tmp_path):
    run("gen-data", "--train", 2, "--val", 1, "--height", 16, "--width", 16, "--out", tmp_path)
    with open(tmp_path / "val.auxd", "r+b") as fh:
        fh.seek(40)
        fh.write(b"\xff")
    assert verify_manifest(tmp_path / "manifest.json") == ["val"]


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run("gen-data", "--height", 33, "--out", tmp_path) == 2
    assert "height must be divisible by 8 (got 33)" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        run("train", "--variant", "auxbogus")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run("train", "--variant", "auxtwb", "--ema-beta", "1.5")
    assert exc.value.code == 2


def test_missing_dataset_exits_1(tmp_path, capsys):
    assert run("train", "--variant", "segnet", "--data", tmp_path / "nowhere", "--out", tmp_path) == 1
    assert "nowhere" in capsys.readouterr().err


def test_train_writes_reports(data_dir, tmp_path, capsys):
    out = tmp_path / "ftwb"
    assert run("train", "--variant", "auxftwb", "--data", data_dir, "--epochs", 2, "--batch", 8,
               "--out", out) == 0
    assert "best_epoch=" in capsys.readouterr().out
    rows = read_csv(out / "report.csv")
    assert len(rows) == 2 and sum(int(r["best_flag"]) for r in rows) == 1
    for b in read_csv(out / "batches.csv"):
        ls, ld, lam = float(b["L_seg"]), float(b["L_depth"]), float(b["lambda_seg"])
        assert lam == pytest.approx(ls * ld, rel=1e-8)
    assert verify_manifest(out / "manifest.json") == []


def test_train_segnet_reports_unit_weights(data_dir, tmp_path):
    out = tmp_path / "seg"
    assert run("train", "--variant", "segnet", "--data", data_dir, "--epochs", 1, "--out", out) == 0
    for r in read_csv(out / "report.csv"):
        assert (r["lambda_seg"], r["lambda_depth"], r["L_depth"]) == ("1", "0", "nan")


def test_train_is_byte_reproducible(data_dir, tmp_path):
    for name in ("a", "b"):
        run("train", "--variant", "auxtwb", "--data", data_dir, "--epochs", 1, "--out", tmp_path / name)
    for f in ("report.csv", "batches.csv", "checkpoint.auxc"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_compare_small(data_dir, tmp_path, capsys):
    out = tmp_path / "cmp"
    assert run("compare", "--data", data_dir, "--seeds", 2, "--variants", "segnet,auxtwb",
               "--epochs", 1, "--out", out, "--pretty") == 0
    text = capsys.readouterr().out
    assert "auxtwb: aux_wins=" in text and "/2" in text
    iou = read_csv(out / "iou.csv")
    assert [(r["variant"], r["seed"]) for r in iou] == [
        ("segnet", "1"), ("segnet", "2"), ("segnet", "mean"),
        ("auxtwb", "1"), ("auxtwb", "2"), ("auxtwb", "mean")]
    params = {r["model"]: r for r in read_csv(out / "params.csv")}
    assert params["auxnet"]["params_inference"] == params["segnet"]["params_training"]
    assert len(read_csv(out / "wins.csv")) == 2


def test_compare_requires_baseline(data_dir, tmp_path):
    assert run("compare", "--data", data_dir, "--variants", "auxtwb", "--out", tmp_path) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "auxseg", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "auxseg" in res.stdout
