from __future__ import annotations

import json
from pathlib import Path

import pytest

from crxguard.cli import main
from crxguard.synth import SynthConfig, synthesize
from crxguard.corpus import write_corpus

from helpers import LISTING_MANIFEST, package_bytes

TREES = ["--trees", "15", "--folds", "3"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(synthesize(SynthConfig(years=(2019, 2020, 2021), benign_per_year=50, malicious_per_year=15), 3),
                 root)
    return root


@pytest.fixture(scope="module")
def pipeline(corpus_dir, tmp_path_factory):
    """build-vocab -> extract -> train -> calibrate -> evaluate for every flavor."""
    out = tmp_path_factory.mktemp("out")
    o = ["--out-dir", out, "--workers", 1]
    assert main([str(a) for a in [*o, "build-vocab", "--corpus", corpus_dir, "--seed", 4]]) == 0
    for side in ("train", "test"):
        assert main([str(a) for a in [*o, "extract", "--corpus", corpus_dir, "--schema", out / "schema.json",
                                      "--split", out / "split.json", "--side", side]]) == 0
    for flavor in ("metadata", "source", "combined"):
        assert main([str(a) for a in [*o, "train", "--matrix", out / "features_train.npz", "--schema",
                                      out / "schema.json", "--flavor", flavor, "--trees", 15, "--seed", 4]]) == 0
        assert main([str(a) for a in [*o, "calibrate", "--model", out / f"model_{flavor}.bin", "--matrix",
                                      out / "features_train.npz", "--schema", out / "schema.json",
                                      "--folds", 3, "--seed", 4]]) == 0
        assert main([str(a) for a in [*o, "evaluate", "--model", out / f"model_{flavor}.calibrated.bin",
                                      "--schema", out / "schema.json", "--corpus", corpus_dir,
                                      "--split", out / "split.json", "--side", "test"]]) == 0
    return out


def test_golden_pipeline(pipeline, capsys):
    capsys.readouterr()
    split = json.loads((pipeline / "split.json").read_text())
    schema = json.loads((pipeline / "schema.json").read_text())
    assert len(split["train"]) + len(split["test"]) == 195
    assert schema
    for flavor in ("metadata", "source", "combined"):
        rep = json.loads((pipeline / f"report_{flavor}.json").read_text())
        assert rep["flavor"] == flavor
        assert rep["n"] <= len(split["test"])
        assert (pipeline / f"slices_{flavor}_year.csv").exists()
        cal = json.loads((pipeline / f"calibration_{flavor}.json").read_text())
        assert cal["folds"] == 3 and len(cal["fold_thresholds"]) == 3


def test_intersect_and_report(pipeline, capsys):
    reports = [pipeline / f"report_{f}.json" for f in ("metadata", "source", "combined")]
    code, out, _ = run(capsys, "--out-dir", pipeline, "intersect", *reports)
    assert code == 0
    assert all(out["fp"] <= fp for fp in out["fp_by_flavor"].values())
    code, out, _ = run(capsys, "--out-dir", pipeline, "report", pipeline / "report_combined.json", "--trees", 15)
    assert code == 0 and Path(out["sweep"]).exists()


def test_importance(pipeline, capsys):
    code, out, _ = run(capsys, "--out-dir", pipeline, "importance", "--model",
                       pipeline / "model_combined.calibrated.bin", "--schema", pipeline / "schema.json", "--top", 5)
    assert code == 0 and len(out["top"]) == 5


def test_predict_single_crx(pipeline, tmp_path, capsys):
    crx = tmp_path / "one.crx"
    crx.write_bytes(package_bytes(LISTING_MANIFEST, {"service_worker.js": "chrome.tabs.query({}, function(t){});",
                                                     "script.js": "document.title = 'x';"}))
    code, out, _ = run(capsys, "--out-dir", tmp_path, "predict", "--model",
                       pipeline / "model_combined.calibrated.bin", "--schema", pipeline / "schema.json",
                       "--crx", crx)
    assert code == 0
    assert out["id"] == "one" and out["label"] in ("benign", "malicious") and 0.0 <= out["proba"] <= 1.0


def test_predict_rejects_wrong_schema(pipeline, corpus_dir, tmp_path, capsys):
    o = ["--out-dir", tmp_path]
    assert run(capsys, *o, "build-vocab", "--corpus", corpus_dir, "--seed", 99, "--top-k", 50)[0] == 0
    code, _, err = run(capsys, *o, "predict", "--model", pipeline / "model_combined.calibrated.bin",
                       "--schema", tmp_path / "schema.json", "--corpus", corpus_dir)
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "schema_mismatch"


def test_missing_seed_is_config_error(corpus_dir, tmp_path, capsys):
    code, _, err = run(capsys, "--out-dir", tmp_path, "build-vocab", "--corpus", corpus_dir)
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "config_error"


def test_missing_input_reports_json(tmp_path, capsys):
    code, _, err = run(capsys, "--out-dir", tmp_path, "ingest", tmp_path / "nowhere")
    assert code == 2
    doc = json.loads(err.strip().splitlines()[-1])
    assert set(doc) == {"error", "detail"}


def test_config_file_supplies_seed(corpus_dir, tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("seed: 4\nworkers: 1\n")
    code, out, _ = run(capsys, "--config", cfg, "--out-dir", tmp_path, "build-vocab", "--corpus", corpus_dir)
    assert code == 0 and out["train"] > 0
    cfg.write_text("bogus: 1\n")
    assert run(capsys, "--config", cfg, "--out-dir", tmp_path, "ingest", corpus_dir)[0] == 2


def test_ingest_and_synth(tmp_path, capsys):
    code, out, _ = run(capsys, "--out-dir", tmp_path, "synth", "--seed", 1, "--scale", 0.02)
    assert code == 0 and out["records"] == 5 * (18 + 2)
    code, out, _ = run(capsys, "--out-dir", tmp_path, "ingest", tmp_path / "corpus")
    assert code == 0 and out["records"] <= 100


def test_cluster_command(corpus_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "--out-dir", tmp_path, "cluster", "--corpus", corpus_dir)
    assert code == 0
    doc = json.loads((tmp_path / "clusters.json").read_text())
    assert out["n_clusters"] == len(doc["clusters"])


def test_longitudinal_is_byte_identical(corpus_dir, tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = run(capsys, "--out-dir", tmp_path / name, "--workers", 1, "longitudinal",
                         "--corpus", corpus_dir, "--years", 2020, 2021, *TREES, "--seed", 7)
        assert code == 0
    for f in ("longitudinal.csv", "longitudinal_manifest_version.csv", "longitudinal_importance.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_active_learn_and_drift_check(corpus_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "--out-dir", tmp_path, "active-learn", "--corpus", corpus_dir, "--year", 2021,
                       "--K", 3, *TREES, "--seed", 2)
    assert code == 0 and set(out["cumulative_errors"]) == {"uncertainty", "random", "none"}
    assert (tmp_path / "active_uncertainty_trace.json").exists()
    code, out, _ = run(capsys, "--out-dir", tmp_path, "drift-check", "--corpus", corpus_dir, "--year", 2021,
                       *TREES, "--seed", 2)
    assert code == 0 and 0.0 <= out["fnr_in"] <= 1.0
    assert run(capsys, "--out-dir", tmp_path, "drift-check", "--corpus", corpus_dir, "--seed", 2)[0] == 2


def test_subsample_command(pipeline, corpus_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "--out-dir", tmp_path, "subsample", "--corpus", corpus_dir,
                       "--split", pipeline / "split.json", "--fractions", 0.2, 0.8, "--repeats", 1,
                       *TREES, "--seed", 1)
    assert code == 0 and set(out["fpr_mean"]) == {"0.2", "0.8"}
