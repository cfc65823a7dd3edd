"""
End-to-end runs of the command-line pipeline on a small generated corpus.

Usage:
    cd src
    pytest test_cli.py
"""

from __future__ import annotations

import json

import pytest

from cli import main
from lib import artifacts

CONFIG = """\
SYNTH_COUNTS=12,12
SYNTH_STREAMS=6
SYNTH_SAMPLES=90
PENCIL_ORDER=6
P_MAX=10
M_PRIME=4
D_PRIME=4
BOOTSTRAPS_S=10
BOOTSTRAPS_C=5
FOLDS=3
BASELINE_RANK=3
BASELINE_WINDOW=90
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Synth, features and select once; later stages reuse the outputs."""
    root = tmp_path_factory.mktemp("pipeline")
    config = root / "pipeline.env"
    config.write_text(CONFIG, encoding="utf-8")
    base = ["--config", str(config), "--seed", "3"]

    assert main(["synth", "--out", str(root / "corpus"), *base]) == 0
    assert main(["features", "--events", str(root / "corpus"),
                 "--out", str(root / "features.csv"), *base]) == 0
    assert main(["select", "--features", str(root / "features.csv"),
                 "--out", str(root / "select"), *base]) == 0
    return root, base


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def test_synth_writes_manifest_and_events(run):
    root, _ = run
    manifest, fp = artifacts.read_table(root / "corpus" / "manifest.csv", "manifest")
    assert len(manifest) == 24
    assert set(manifest["onset"]) == {30}
    assert len(fp) == 16
    records = artifacts.load_corpus(root / "corpus")
    assert records[0].n_samples == 90
    assert records[0].n_streams(records[0].channel_kinds[0]) == 6


def test_features_file(run):
    root, _ = run
    data, _ = artifacts.read_feature_csv(root / "features.csv")
    assert len(data) == 24
    assert data.dimension == 3 * 2 * (3 + 4 * 3)


def test_select_writes_split_and_choice(run):
    root, _ = run
    train_ids, test_ids = artifacts.read_split(root / "select" / "split.csv")
    assert len(train_ids) == 18 and len(test_ids) == 6
    assert len(artifacts.read_selected_features(root / "select" / "selection.json")) == 4


def test_train_and_eval(run, capsys):
    root, base = run
    args = ["--features", str(root / "features.csv"), "--selection", str(root / "select")]
    assert main(["train", *args, "--out", str(root / "model.json"), "--model", "LR", *base]) == 0
    model = artifacts.load_model(root / "model.json")
    assert len(model.selected_indices) == 4

    assert main(["eval", *args, "--out", str(root / "eval.json"), *base]) == 0
    report = json.loads((root / "eval.json").read_text())
    assert report["bootstraps"] == 5
    assert 0.0 <= report["auc_p5"] <= report["auc_p95"] <= 1.0
    assert len(report["selected_features"]) == 4
    assert sum(map(sum, report["confusion"])) == 6
    assert "Bootstrap evaluation" in capsys.readouterr().out


def test_kfold_and_baseline(run):
    root, base = run
    assert main(["kfold", "--features", str(root / "features.csv"),
                 "--out", str(root / "kfold.csv"), *base]) == 0
    assert artifacts.read_confusion(root / "kfold.csv").counts.sum() == 24

    assert main(["kfold", "--features", str(root / "features.csv"), "--channels", "VPM",
                 "--no-select", "--model", "LR", "--out", str(root / "kfold_vpm.csv"), *base]) == 0
    assert artifacts.read_confusion(root / "kfold_vpm.csv").counts.sum() == 24

    assert main(["baseline", "--events", str(root / "corpus"),
                 "--out", str(root / "baseline.csv"), *base]) == 0
    assert artifacts.read_confusion(root / "baseline.csv").counts.sum() == 24


def test_decompose_and_order(run):
    root, base = run
    assert main(["decompose", "--events", str(root / "corpus"),
                 "--out", str(root / "decompose"), *base]) == 0
    envelope, _ = artifacts.read_table(root / "decompose" / "envelope.csv", "envelope")
    assert len(envelope) == 24 * 3
    assert (envelope["order_p"] == 6).all()

    assert main(["order", "--events", str(root / "corpus"), "--channels", "VPM",
                 "--out", str(root / "order"), *base]) == 0
    order = json.loads((root / "order" / "order.json").read_text())
    assert 1 <= order["order_p"] <= 10


def test_sweep(run):
    root, base = run
    assert main(["sweep", "--features", str(root / "features.csv"),
                 "--selection", str(root / "select"), "--measures", "F,S",
                 "--d-primes", "1,2", "--out", str(root / "sweep.csv"), *base]) == 0
    frame, _ = artifacts.read_table(root / "sweep.csv", "sweep")
    assert frame["measure"].tolist() == ["F", "F", "S", "S"]


# ---------------------------------------------------------------------------
# Reproducibility and rejected input
# ---------------------------------------------------------------------------

def test_reruns_are_byte_identical(run):
    root, base = run
    assert main(["features", "--events", str(root / "corpus"),
                 "--out", str(root / "features_again.csv"), *base]) == 0
    assert (root / "features_again.csv").read_bytes() == (root / "features.csv").read_bytes()

    assert main(["select", "--features", str(root / "features.csv"),
                 "--out", str(root / "select_again"), *base]) == 0
    for name in ("split.csv", "selection.csv", "selection.json"):
        assert (root / "select_again" / name).read_bytes() == (root / "select" / name).read_bytes()


def test_seed_changes_the_split(run):
    root, base = run
    assert main(["select", "--features", str(root / "features.csv"),
                 "--out", str(root / "select_seed"), *base[:2], "--seed", "4"]) == 0
    assert (artifacts.read_split(root / "select_seed" / "split.csv")
            != artifacts.read_split(root / "select" / "split.csv"))


def test_malformed_config_exits_2(tmp_path, capsys):
    config = tmp_path / "bad.env"
    config.write_text("PENCIL_ORDRE=6\n", encoding="utf-8")
    assert main(["synth", "--out", str(tmp_path / "c"), "--config", str(config)]) == 2
    assert "PENCIL_ORDRE" in capsys.readouterr().err


def test_missing_inputs_exit_2(tmp_path):
    assert main(["features", "--events", str(tmp_path / "none"),
                 "--out", str(tmp_path / "f.csv")]) == 2
    assert main(["kfold", "--features", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path / "k.csv")]) == 2


def test_usage_errors_exit_2():
    assert main([]) == 2
    assert main(["select", "--measure", "Q", "--features", "x", "--out", "y"]) == 2
