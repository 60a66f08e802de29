import json
from pathlib import Path

import numpy as np
import pytest

import ikrnet.train as train_mod
from ikrnet.cli import main
from ikrnet.data import DatasetManifest
from ikrnet.metrics import EvalReport

# short protocol that still covers every robustness zone
SMALL_SPEC = {"baseline_minutes": 30.0, "post_drug_hours": 3.75, "seed": 3}


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SMALL_SPEC))
    assert main(["gen-data", "--config", str(spec), "--patients", "4", "--out", str(root / "data")]) == 0
    return root


def test_gen_data_lists_patients_and_zones(tmp_path):
    assert main(["gen-data", "--patients", "10", "--out", str(tmp_path)]) == 0
    m = DatasetManifest.load(tmp_path / "manifest.json")
    assert len(m.patients()) == 10
    zones = {e.zone for e in m.entries}
    assert {"Baseline", "St-Dg+", "St+Dg+"} <= zones
    assert all(m.by_partition(p) for p in ("train", "val", "eval", "holdout"))
    snap = json.loads((tmp_path / "gen-data_config.json").read_text())
    assert snap["spec"]["n_patients"] == 10


def test_gen_data_is_byte_identical(dataset, tmp_path):
    assert main(["gen-data", "--config", str(dataset / "spec.json"), "--patients", "4",
                 "--out", str(tmp_path / "again")]) == 0
    assert tree_bytes(dataset / "data") == tree_bytes(tmp_path / "again")


@pytest.mark.parametrize("body", [{"n_patients": 0}, {"bogus": 1},
                                  {"drug_effect": {"qt_prolongation_ms": -5}}, "not json"])
def test_gen_data_invalid_spec_exits_2(tmp_path, capsys, body):
    path = tmp_path / "spec.json"
    path.write_text(body if isinstance(body, str) else json.dumps(body))
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_augment_multiplier_and_idempotence(dataset, tmp_path):
    data = dataset / "data"
    base = DatasetManifest.load(data / "manifest.json")
    out = tmp_path / "aug"
    assert main(["augment", "--data", str(data), "--out", str(out)]) == 0
    aug = DatasetManifest.load(out / "manifest.json")
    assert len(aug.by_partition("train")) == 3 * len(base.by_partition("train"))
    assert len(aug.by_partition("holdout")) == 8 * len(base.by_partition("holdout"))
    assert main(["augment", "--data", str(out), "--out", str(out)]) == 0
    assert DatasetManifest.load(out / "manifest.json").entries == aug.entries


def test_augment_rate_above_source_exits_2(dataset, tmp_path):
    assert main(["augment", "--data", str(dataset / "data"), "--rates", "600",
                 "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "manifest.json").exists()


@pytest.fixture(scope="module")
def trained(dataset):
    out = dataset / "run"
    assert main(["train", "--data", str(dataset / "data"), "--epochs", "1", "--seed", "0",
                 "--out", str(out)]) == 0
    return out


def test_train_writes_log_checkpoint_and_snapshot(trained):
    lines = [json.loads(s) for s in (trained / "train_log.jsonl").read_text().splitlines()]
    assert [l["epoch"] for l in lines] == [0, 1]
    assert set(lines[0]) == {"epoch", "train_loss", "val_loss"}
    assert (trained / "model.ckpt").exists()
    snap = json.loads((trained / "train_config.json").read_text())
    assert snap["train"]["lr"] == 1e-3 and snap["train"]["epochs"] == 1


def test_resume_with_other_config_refused(dataset, trained, tmp_path):
    code = main(["train", "--data", str(dataset / "data"), "--epochs", "0", "--model-config", "desk",
                 "--resume", str(trained / "model.ckpt"), "--out", str(tmp_path)])
    assert code == 3


def test_eval_with_other_config_refused(dataset, trained, tmp_path):
    code = main(["eval", "--data", str(dataset / "data"), "--checkpoint", str(trained / "model.ckpt"),
                 "--model-config", "desk", "--out", str(tmp_path)])
    assert code == 3


def test_eval_report_is_consistent(dataset, trained, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--data", str(dataset / "data"), "--checkpoint",
                 str(trained / "model.ckpt"), "--out", str(out)]) == 0
    report = EvalReport.from_json((out / "report.json").read_text())
    holdout = DatasetManifest.load(dataset / "data" / "manifest.json").by_partition("holdout")
    assert report.n_predictions == len(holdout)
    assert sum(report.rate_counts.values()) == report.n_predictions
    in_zones = sum(1 for e in holdout if e.zone in ("Baseline", "St-Dg+", "St+Dg+"))
    assert sum(report.zone_counts.values()) == in_zones
    for name in ("zones.csv", "rates.csv", "threshold_curve.csv", "eval_config.json"):
        assert (out / name).exists()
    rep = tmp_path / "rep"
    assert main(["report", "--report", str(out), "--out", str(rep)]) == 0
    for name in ("zones.csv", "rates.csv", "threshold_curve.csv"):
        assert (rep / name).read_bytes() == (out / name).read_bytes()


def _stub_scores(monkeypatch, labels):
    queue = list(labels)

    def fake(model, X, batch_size=64):
        n = len(X)
        out = np.array(queue[:n], dtype=float)
        del queue[:n]
        return out

    monkeypatch.setattr(train_mod, "predict_scores", fake)


@pytest.mark.parametrize("stub", ["perfect", "all_negative"])
def test_eval_with_stub_classifiers(dataset, trained, tmp_path, monkeypatch, stub):
    aug = tmp_path / "aug"
    assert main(["augment", "--data", str(dataset / "data"), "--out", str(aug)]) == 0
    manifest = DatasetManifest.load(aug / "manifest.json")
    y = [1 if e.label == "Sot+" else 0 for e in manifest.by_partition("holdout")]
    _stub_scores(monkeypatch, y if stub == "perfect" else [0.0] * len(y))
    assert main(["eval", "--data", str(aug), "--checkpoint",
                 str(trained / "model.ckpt"), "--out", str(tmp_path)]) == 0
    report = EvalReport.from_json((tmp_path / "report.json").read_text())
    if stub == "perfect":
        assert report.overall["accuracy"] == 1.0
        assert report.apd_zones == 0.0 and report.apd_rates == 0.0
        assert set(report.per_zone) == {"Baseline", "St-Dg+", "St+Dg+"}
        assert all(a == 1.0 for a in report.per_zone.values())
        assert len(report.per_rate) == 8 and all(a == 1.0 for a in report.per_rate.values())
    else:
        assert report.overall["accuracy"] == pytest.approx(1 - np.mean(y), abs=1e-12)


def test_missing_inputs_exit_2(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2
    assert main(["report", "--report", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_corrupt_record_exits_3(dataset, tmp_path):
    import shutil
    copy = tmp_path / "data"
    shutil.copytree(dataset / "data", copy)
    entry = DatasetManifest.load(copy / "manifest.json").by_partition("train")[0]
    (copy / entry.path).unlink()
    assert main(["train", "--data", str(copy), "--epochs", "0", "--out", str(tmp_path / "o")]) == 3
