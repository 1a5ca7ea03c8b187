import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from customtrain.cli import main

from conftest import write_csv


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def regression_files(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(70, 3))
    X[35:] += 6
    y = np.where(np.arange(70) < 35, X[:, 0], -X[:, 0]) + 0.1 * rng.normal(size=70)
    header = ["a", "b", "c", "y"]
    train = write_csv(tmp_path / "train.csv", header, np.column_stack([X[:50], y[:50]]))
    test = write_csv(tmp_path / "test.csv", header[:3], X[50:])
    return train, test


@pytest.fixture
def label_files(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 2))
    labels = np.where(X[:, 0] + 0.5 * rng.normal(size=60) > 0, "cancer", "normal")
    rows = [[*x, lab] for x, lab in zip(X, labels)]
    train = write_csv(tmp_path / "ctrain.csv", ["u", "v", "status"], rows[:45])
    test = write_csv(tmp_path / "ctest.csv", ["u", "v", "status"], rows[45:])
    return train, test


def cv_fit(train, test, out, *extra):
    return main(["cv-fit", "--train", str(train), "--test", str(test), "--response", "y",
                 "--g-grid", "1,2,3", "--lambda-count", "20", "--folds", "5",
                 "--out-dir", str(out), *extra])


def test_cv_fit_then_predict(regression_files, tmp_path):
    train, test = regression_files
    out = tmp_path / "run"
    assert cv_fit(train, test, out) == 0
    for name in ("model.json", "cv_report.json", "cv_report.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "cv-fit" and manifest["seed"] == 0
    assert {"version", "flags", "inputs", "duration_seconds"} <= set(manifest)
    assert main(["predict", "--model", str(out / "model.json"), "--test", str(test),
                 "--out-dir", str(out)]) == 0
    rows = read_csv(out / "predictions.csv")
    assert list(rows[0]) == ["row_index", "prediction", "cluster_id", "rejected"]
    assert len(rows) == 20 and all(r["rejected"] == "false" for r in rows)
    surface = read_csv(out / "cv_report.csv")
    assert len(surface) == 3 * 20


def test_cv_fit_is_byte_identical(regression_files, tmp_path):
    train, test = regression_files
    outs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        assert cv_fit(train, test, tmp_path / name, "--threads", threads) == 0
        outs.append(tmp_path / name)
    for name in ("model.json", "cv_report.json", "cv_report.csv"):
        first = (outs[0] / name).read_bytes()
        assert all((o / name).read_bytes() == first for o in outs[1:])


def test_simulate_is_byte_identical(tmp_path):
    outs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "4")):
        out = tmp_path / name
        assert main(["simulate", "--setting", "low-dim", "--sigma-c", "0,10", "--seeds", "2",
                     "--methods", "ST,KNN", "--lambda-count", "20", "--threads", threads,
                     "--out-dir", str(out)]) == 0
        outs.append(out)
    for name in ("results.csv", "summary.csv"):
        first = (outs[0] / name).read_bytes()
        assert all((o / name).read_bytes() == first for o in outs[1:])
    rows = read_csv(outs[0] / "results.csv")
    assert len(rows) == 2 * 2 * 2


def test_simulate_cells(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--setting", "low-dim", "--sigma-c", "0,5,10", "--seeds", "10",
                 "--methods", "KNN", "--k-grid", "5", "--out-dir", str(out)]) == 0
    rows = read_csv(out / "results.csv")
    assert len({(r["sigma_c"], r["seed"]) for r in rows}) == 30


def test_loss_weights_flag(label_files, tmp_path):
    train, test = label_files
    out = tmp_path / "w"
    assert main(["cv-fit", "--train", str(train), "--test", str(test), "--response", "status",
                 "--g-grid", "1,2", "--lambda-count", "10", "--folds", "5",
                 "--loss-weights", "cancer=2,normal=1", "--out-dir", str(out)]) == 0
    model = json.loads((out / "model.json").read_text())
    classes = model["meta"]["classes"]
    assert dict(zip(classes, model["meta"]["loss_weights"])) == {"cancer": 2.0, "normal": 1.0}
    assert main(["predict", "--model", str(out / "model.json"), "--test", str(test),
                 "--out-dir", str(out)]) == 0
    assert {r["prediction"] for r in read_csv(out / "predictions.csv")} <= {"cancer", "normal"}


def test_rejection_lifecycle(tmp_path):
    train = write_csv(tmp_path / "t.csv", ["x", "y"], [[0, 0], [0.5, 0.5], [1, 1], [1.5, 1.5]])
    test = write_csv(tmp_path / "s.csv", ["x"], [[100], [101]])
    out = tmp_path / "r"
    assert main(["cv-fit", "--train", str(train), "--test", str(test), "--response", "y",
                 "--g-grid", "2", "--folds", "2", "--out-dir", str(out)]) == 0
    model = str(out / "model.json")
    assert main(["predict", "--model", model, "--test", str(test), "--out-dir", str(out)]) == 0
    rows = read_csv(out / "predictions.csv")
    assert [r["rejected"] for r in rows] == ["true", "true"]
    assert [r["prediction"] for r in rows] == ["", ""]
    assert len(read_csv(out / "rejections.csv")) == 2
    assert main(["predict", "--model", model, "--test", str(test), "--resolve-rejections",
                 "--out-dir", str(out)]) == 2
    assert main(["predict", "--model", model, "--test", str(test), "--train", str(train),
                 "--resolve-rejections", "--out-dir", str(out)]) == 0
    rows = read_csv(out / "predictions.csv")
    assert all(r["prediction"] and r["rejected"] == "false" for r in rows)
    assert [float(r["d_prime"]) for r in rows] == [101.0, 101.0]
    report = read_csv(out / "rejections.csv")
    assert all(r["resolved"] == "true" and float(r["d_prime"]) == 101.0 for r in report)


@pytest.mark.parametrize("method", ["st", "knn"])
def test_baselines(regression_files, tmp_path, method):
    train, test = regression_files
    out = tmp_path / method
    assert main(["baseline", method, "--train", str(train), "--test", str(test),
                 "--response", "y", "--lambda-count", "20", "--folds", "5",
                 "--out-dir", str(out)]) == 0
    rows = read_csv(out / "predictions.csv")
    assert len(rows) == 20 and all(r["prediction"] for r in rows)


def test_input_errors_exit_2(regression_files, tmp_path):
    train, test = regression_files
    assert cv_fit(tmp_path / "missing.csv", test, tmp_path / "e") == 2
    assert main(["cv-fit", "--train", str(train), "--test", str(test), "--response", "zz",
                 "--out-dir", str(tmp_path)]) == 2
    assert cv_fit(train, test, tmp_path / "e", "--loss-weights", "a=1") == 2
    assert main(["cv-fit"]) == 2
    assert main(["simulate", "--setting", "mid-dim", "--out-dir", str(tmp_path)]) == 2
    assert main(["predict", "--model", str(tmp_path / "none.json"), "--test", str(test)]) == 2
    bad = write_csv(tmp_path / "bad.csv", ["a", "b", "c"], [[1, 2, "NaN"], [1, 2, 3]])
    assert cv_fit(train, bad, tmp_path / "e") == 2


def test_predict_rejects_other_test_rows(regression_files, tmp_path):
    train, test = regression_files
    out = tmp_path / "run"
    assert cv_fit(train, test, out) == 0
    other = write_csv(tmp_path / "other.csv", ["a", "b", "c"], [[0, 0, 0], [1, 1, 1]])
    assert main(["predict", "--model", str(out / "model.json"), "--test", str(other),
                 "--out-dir", str(out)]) == 2


def test_internal_error_exit_1(monkeypatch, regression_files, tmp_path):
    import customtrain.cli as cli

    def boom(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "cv_select", boom)
    train, test = regression_files
    assert cv_fit(train, test, tmp_path / "x") == 1


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "customtrain.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
