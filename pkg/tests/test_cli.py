from __future__ import annotations

import json
from pathlib import Path

import pytest

from hcmrisk.cli import main


def write_config(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small synthetic cohorts plus one trained two-model run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfgs = {
        "florence": {"seed": 1, "preset": "florence-like", "overrides": {"n_patients": 160}, "stem": "florence"},
        "rennes": {"seed": 2, "preset": "rennes-like", "overrides": {"n_patients": 120}, "stem": "rennes"},
        "long": {"seed": 3, "preset": "longitudinal", "overrides": {"n_patients": 60}, "stem": "long"},
    }
    for name, doc in cfgs.items():
        assert main(["synth", "--config", str(write_config(root / f"synth_{name}.json", doc)),
                     "--out", str(root / "data")]) == 0
    train = {"seed": 5, "cohort": "data/florence.csv", "schema": "data/schema.json", "models": ["lr", "svm"],
             "grids": {"lr": {"lam": [0.1, 1.0]}, "svm": {"C": [1.0]}},
             "cv": {"sffs_cap": 2, "shap_permutations": 10}}
    write_config(root / "train.json", train)
    assert main(["train", "--config", str(root / "train.json"), "--out", str(root / "train_a")]) == 0
    return root


def test_synth_outputs_and_determinism(workspace, tmp_path):
    data = workspace / "data"
    for f in ("florence.csv", "schema.json", "florence_metadata.json", "florence_summary.json", "manifest.json"):
        assert (data / f).exists()
    assert json.loads((data / "florence_summary.json").read_text())["patients"] == 160
    cfg = workspace / "synth_rennes.json"
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_train_outputs(workspace):
    out = workspace / "train_a"
    for kind in ("lr", "svm"):
        for k in range(5):
            assert (out / kind / f"fold_{k}.json").exists()
        assert (out / kind / "ensemble.json").exists()
    report = json.loads((out / "experiment_report.json").read_text())
    assert set(report["models"]) == {"lr", "svm"} and "friedman" in report
    assert (out / "mean_roc.svg").read_text().startswith("<svg")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5 and "cohort" in manifest["input_sha256"]
    assert (out / "metrics_table.csv").read_text().splitlines()[0].startswith("model,sensitivity")


def test_train_rerun_byte_identical(workspace):
    assert main(["train", "--config", str(workspace / "train.json"), "--out", str(workspace / "train_b")]) == 0
    a, b = tree_bytes(workspace / "train_a"), tree_bytes(workspace / "train_b")
    assert a.keys() == b.keys() and all(a[k] == b[k] for k in a)


def test_validate_survival_esc(workspace):
    ens = "train_a/lr/ensemble.json"
    common = {"seed": 1, "ensemble": ens, "cohort": "data/rennes.csv", "schema": "data/schema.json"}
    write_config(workspace / "validate.json", {**common, "out": "validate"})
    assert main(["validate", "--config", str(workspace / "validate.json")]) == 0
    doc = json.loads((workspace / "validate" / "external_report.json").read_text())
    assert doc["n"] == 120 and "mann_whitney_ml" in doc and "esc" in doc
    assert (workspace / "validate" / "prediction_kde.csv").exists()
    write_config(workspace / "survival.json", {**common, "training_cohort": "data/florence.csv", "out": "survival"})
    assert main(["survival", "--config", str(workspace / "survival.json")]) == 0
    surv = json.loads((workspace / "survival" / "survival_report.json").read_text())
    assert {"ml", "esc"} <= set(surv) and "log_rank" in surv["ml"]
    write_config(workspace / "esc.json", {"seed": 1, "cohort": "data/florence.csv", "schema": "data/schema.json",
                                         "out": "esc"})
    assert main(["esc-score", "--config", str(workspace / "esc.json")]) == 0
    lines = (workspace / "esc" / "esc_scores.csv").read_text().splitlines()
    assert lines[0] == "patient_id,esc_risk_5y,out_of_range" and len(lines) > 100


def test_validate_threshold_extremes(workspace, tmp_path):
    base = {"seed": 1, "ensemble": str(workspace / "train_a/lr/ensemble.json"),
            "cohort": str(workspace / "data/rennes.csv"), "schema": str(workspace / "data/schema.json")}
    for thr, key in ((0.0, "sensitivity"), (1.0000001, "specificity")):
        cfg = write_config(tmp_path / f"v{thr}.json", {**base, "threshold": thr, "out": str(tmp_path / f"o{thr}")})
        assert main(["validate", "--config", str(cfg)]) == 0
        doc = json.loads((tmp_path / f"o{thr}" / "external_report.json").read_text())
        assert doc["metrics"][key] == 1.0


def test_longitudinal(workspace):
    cfg = write_config(workspace / "long.json", {"seed": 2, "cohort": "data/long.csv", "schema": "data/schema.json",
                                                "model": "lr", "grids": {"lr": {"lam": [1.0]}},
                                                "cv": {"sffs_cap": 2}, "out": "long_out"})
    assert main(["longitudinal", "--config", str(cfg)]) == 0
    doc = json.loads((workspace / "long_out" / "slope_summary.json").read_text())
    assert doc["slope_units"] == "probability per year"
    assert (workspace / "long_out" / "trajectories.csv").exists()


def test_config_errors(workspace, tmp_path, capsys):
    no_seed = write_config(tmp_path / "a.json", {"cohort": str(workspace / "data/florence.csv"), "out": str(tmp_path)})
    assert main(["train", "--config", str(no_seed)]) == 2
    assert "seed" in capsys.readouterr().err
    missing = write_config(tmp_path / "b.json", {"seed": 1, "cohort": "nope.csv", "out": str(tmp_path)})
    assert main(["esc-score", "--config", str(missing)]) == 2
    bad_kind = write_config(tmp_path / "c.json", {"seed": 1, "cohort": str(workspace / "data/florence.csv"),
                                                 "schema": str(workspace / "data/schema.json"), "models": ["knn"],
                                                 "out": str(tmp_path)})
    assert main(["train", "--config", str(bad_kind)]) == 2
    (tmp_path / "bad.csv").write_text("patient_id,exam_date,followup_years,event_time_years,bogus\n"
                                      "A,2010-01-01,6,,1\n")
    malformed = write_config(tmp_path / "d.json", {"seed": 1, "cohort": str(tmp_path / "bad.csv"),
                                                  "schema": str(workspace / "data/schema.json"), "out": str(tmp_path)})
    assert main(["esc-score", "--config", str(malformed)]) == 2
    (tmp_path / "notjson.json").write_text("{")
    assert main(["synth", "--config", str(tmp_path / "notjson.json")]) == 2
    bad_override = write_config(tmp_path / "e.json", {"seed": 1, "preset": "florence-like",
                                                     "overrides": {"wings": 2}, "out": str(tmp_path)})
    assert main(["synth", "--config", str(bad_override)]) == 2


def test_seed_override_changes_output(workspace, tmp_path):
    cfg = workspace / "synth_rennes.json"
    assert main(["synth", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "s9")]) == 0
    assert json.loads((tmp_path / "s9" / "manifest.json").read_text())["seed"] == 9
    assert (tmp_path / "s9" / "rennes.csv").read_bytes() != (workspace / "data" / "rennes.csv").read_bytes()
