import csv
import json

import numpy as np
import pytest

from fairdistill.cli import run
from fairdistill.datasets import LabeledDataset
from fairdistill.matrix import ConfigError, config_from_dict, load_config


def tiny_matrix_config():
    return {
        "dataset": {"num_classes": 2, "num_groups": 2, "mode": "foreground",
                    "per_class_count": 12, "test_per_class_count": 8,
                    "resolution": [8, 8], "seed": 0},
        "grid": {"weighting": ["vanilla_ratio", "fairdd_uniform"],
                 "matcher": ["distribution"], "ipc": [2], "br": [0.75],
                 "init": ["random_real"], "seeds": [0]},
        "distance": "mse",
        "iterations": 3,
        "lr_pixels": 1.0,
        "group_batch": 8,
        "eval": {"arch": "mlp", "epochs": 2, "lr": 0.01, "batch": 8},
        "eval_seeds_per_cell": 1,
    }


# ------------------------------------------------------------------- gen-data

def test_gen_data_writes_train_and_balanced_test(tmp_path, capsys):
    out = tmp_path / "train.fdds"
    test_out = tmp_path / "test.fdds"
    code = run(["gen-data", "--classes", "3", "--groups", "3", "--br", "0.8",
                "--mode", "fg", "--per-class", "30", "--test-per-class", "9",
                "--resolution", "8", "8", "--seed", "5",
                "--out", str(out), "--test-out", str(test_out)])
    assert code == 0
    ds = LabeledDataset.load(out)
    assert (len(ds), ds.num_classes, ds.num_groups) == (90, 3, 3)
    test = LabeledDataset.load(test_out)
    from fairdistill.datasets import measured_bias_ratio
    assert all(abs(v - 1 / 3) < 1e-9 for v in measured_bias_ratio(test).values())


def test_gen_data_rejects_bad_br(tmp_path, capsys):
    code = run(["gen-data", "--classes", "2", "--groups", "4", "--br", "0.1",
                "--out", str(tmp_path / "x.fdds")])
    assert code == 1
    assert "br" in capsys.readouterr().err


def test_unknown_flag_is_validation_error(tmp_path, capsys):
    assert run(["gen-data", "--clases", "2", "--out", "x"]) == 1
    assert capsys.readouterr().err.strip() != ""


def test_gen_data_grayscale_mode(tmp_path):
    out = tmp_path / "gray.fdds"
    test_out = tmp_path / "gray-test.fdds"
    code = run(["gen-data", "--classes", "2", "--groups", "2", "--br", "0.9",
                "--mode", "gray", "--per-class", "20", "--test-per-class", "10",
                "--resolution", "8", "8", "--out", str(out),
                "--test-out", str(test_out)])
    assert code == 0
    test = LabeledDataset.load(test_out)
    assert len(test) == 2 * 2 * 10  # duplicated copies double the size


# -------------------------------------------------------------- distill + eval

@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    train, test = root / "train.fdds", root / "test.fdds"
    assert run(["gen-data", "--classes", "2", "--groups", "2", "--br", "0.75",
                "--mode", "fg", "--per-class", "16", "--test-per-class", "8",
                "--resolution", "8", "8", "--seed", "0",
                "--out", str(train), "--test-out", str(test)]) == 0
    syn = root / "syn.fdds"
    assert run(["distill", "--data", str(train), "--out", str(syn), "--ipc", "2",
                "--iterations", "3", "--lr", "1.0", "--matcher", "dm",
                "--weighting", "fairdd", "--seed", "0"]) == 0
    return root, train, test, syn


def test_distill_writes_container_and_manifest(pipeline):
    root, train, test, syn = pipeline
    manifest = json.loads((root / "syn.fdds.json").read_text())
    assert manifest["config"]["match"]["weighting"] == "fairdd_uniform"
    assert len(manifest["trace"]) == 3
    assert LabeledDataset.load(syn).num_classes == 2


def test_distill_missing_input_is_validation_error(tmp_path, capsys):
    assert run(["distill", "--data", str(tmp_path / "nope.fdds"),
                "--out", str(tmp_path / "syn.fdds")]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_eval_reports_metrics_in_range(pipeline, capsys):
    root, train, test, syn = pipeline
    report_path = root / "report.json"
    csv_path = root / "report.csv"
    code = run(["eval", "--synthetic", str(syn), "--test", str(test),
                "--arch", "mlp", "--epochs", "3", "--seeds", "0,1",
                "--out", str(report_path), "--csv", str(csv_path)])
    assert code == 0
    report = json.loads(report_path.read_text())
    assert 0.0 <= report["deo_a"] <= report["deo_m"] <= 100.0
    assert 0.0 <= report["accuracy"] <= 100.0
    assert report["seeds"] == [0, 1]
    rows = list(csv.DictReader(csv_path.open()))
    assert len(rows) == 1 and "deo_m" in rows[0]


# --------------------------------------------------------------------- verify

def test_verify_writes_passing_summary(tmp_path):
    out = tmp_path / "verify.json"
    code = run(["verify", "--instances", "6", "--jensen-pairs", "10",
                "--seed", "0", "--out", str(out)])
    assert code == 0
    summary = json.loads(out.read_text())
    assert summary["all_passed"] is True
    assert any(c["asserted"] is False for c in summary["claims"])


# --------------------------------------------------------------------- matrix

def test_matrix_runs_grid_and_report_renders(tmp_path, capsys):
    config_path = tmp_path / "matrix.json"
    config_path.write_text(json.dumps(tiny_matrix_config()))
    out_dir = tmp_path / "runs"
    assert run(["matrix", "--config", str(config_path), "--out-dir", str(out_dir)]) == 0
    rows = list(csv.DictReader((out_dir / "results.csv").open()))
    assert len(rows) == 2
    assert {r["weighting"] for r in rows} == {"vanilla_ratio", "fairdd_uniform"}
    assert all((out_dir / r["synthetic"]).exists() for r in rows)

    table = tmp_path / "table.txt"
    table_csv = tmp_path / "table.csv"
    assert run(["report", "--rows", str(out_dir / "results.csv"),
                "--out", str(table), "--csv", str(table_csv)]) == 0
    text = table.read_text()
    assert "fairdd-vanilla" in text
    rendered = list(csv.DictReader(table_csv.open()))
    assert any(r["weighting"] == "fairdd-vanilla" for r in rendered)


def test_matrix_parallel_jobs_match_serial(tmp_path):
    config_path = tmp_path / "matrix.json"
    config_path.write_text(json.dumps(tiny_matrix_config()))
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert run(["matrix", "--config", str(config_path), "--out-dir", str(serial)]) == 0
    assert run(["matrix", "--config", str(config_path), "--out-dir", str(parallel),
                "--jobs", "2"]) == 0
    rows_s = list(csv.DictReader((serial / "results.csv").open()))
    rows_p = list(csv.DictReader((parallel / "results.csv").open()))
    assert rows_s == rows_p


def test_matrix_rerun_is_byte_identical(tmp_path):
    config_path = tmp_path / "matrix.json"
    config = tiny_matrix_config()
    config["grid"]["weighting"] = ["fairdd_uniform"]
    config_path.write_text(json.dumps(config))
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert run(["matrix", "--config", str(config_path), "--out-dir", str(d1)]) == 0
    assert run(["matrix", "--config", str(config_path), "--out-dir", str(d2)]) == 0
    names = sorted(p.name for p in d1.iterdir())
    assert names == sorted(p.name for p in d2.iterdir())
    for name in names:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name


# ---------------------------------------------------------------- config schema

def test_config_round_trip(tmp_path):
    matrix = config_from_dict(tiny_matrix_config())
    path = tmp_path / "emitted.json"
    matrix.emit(path)
    again = load_config(path)
    assert again == matrix
    assert len(matrix.cells()) == 2


@pytest.mark.parametrize("mutate,pointer", [
    (lambda c: c["grid"].__setitem__("weighting", []), "/grid/weighting"),
    (lambda c: c["grid"].__setitem__("br", [0.4]), "/grid/br/0"),
    (lambda c: c.__setitem__("sneaky", 1), "/sneaky"),
    (lambda c: c["eval"].__setitem__("epochs", -3), "/eval"),
])
def test_config_schema_errors_carry_pointers(mutate, pointer):
    config = tiny_matrix_config()
    mutate(config)
    with pytest.raises(ConfigError, match=pointer.replace("/", "/")):
        config_from_dict(config)


def test_matrix_cli_rejects_missing_config(tmp_path, capsys):
    assert run(["matrix", "--config", str(tmp_path / "none.json"),
                "--out-dir", str(tmp_path)]) == 1


def test_fdd_seed_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("FDD_SEED", "9")
    out = tmp_path / "seeded.fdds"
    assert run(["gen-data", "--classes", "2", "--groups", "2", "--br", "0.75",
                "--per-class", "8", "--resolution", "8", "8",
                "--out", str(out)]) == 0
    explicit = tmp_path / "explicit.fdds"
    assert run(["gen-data", "--classes", "2", "--groups", "2", "--br", "0.75",
                "--per-class", "8", "--resolution", "8", "8", "--seed", "9",
                "--out", str(explicit)]) == 0
    assert out.read_bytes() == explicit.read_bytes()
