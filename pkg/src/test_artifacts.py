"""
Stage artifact files: headers, exact float round trips and schema checks.

Usage:
    cd src
    pytest test_artifacts.py
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from core import ChannelKind, Dataset, InputError, SchemaMismatchError
from feature_selection import Measure, SelectionConfig, bootstrap_select
from learn import ConfusionMatrix, ModelKind, bootstrap_evaluate, fit_pipeline
from lib.artifacts import (
    envelope_frame,
    load_corpus,
    load_model,
    modes_frame,
    read_confusion,
    read_event_csv,
    read_feature_csv,
    read_header,
    read_selected_features,
    read_split,
    read_table,
    save_model,
    write_confusion,
    write_eval,
    write_event_csv,
    write_feature_csv,
    write_manifest,
    write_selection,
    write_split,
)
from modal import PencilConfig, decompose_event
from synth import DEFAULT_TEMPLATES, LINE_TRIP_TEMPLATE, generate_corpus, generate_event


def _dataset():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 10)
    X = rng.normal(size=(20, 4))
    X[:, 0] += 3 * y
    X[0, 1] = 1 / 3
    X[1, 2] = 1e-300
    X[2, 3] = -0.1
    return Dataset.from_matrix(X, y, ["a.x", "b.y", "c.z", "d.w"],
                               [f"ev-{i:03d}" for i in range(20)])


def _foreign_json(tmp_path):
    path = tmp_path / "other.json"
    path.write_text(json.dumps({"schema": "eval/1"}), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Events and manifest
# ---------------------------------------------------------------------------

def test_event_csv_round_trip_is_exact(tmp_path):
    record = generate_event(LINE_TRIP_TEMPLATE, n_streams=4, n_samples=50, seed=3)
    path = write_event_csv(record, tmp_path / "a.csv", fingerprint="abc123")
    back = read_event_csv(path, record.event_id, record.label, record.sample_rate_hz)
    assert back.channel_kinds == record.channel_kinds
    for kind in record.channels:
        np.testing.assert_array_equal(back.channels[kind], record.channels[kind])
    again = write_event_csv(back, tmp_path / "b.csv", fingerprint="abc123")
    assert again.read_bytes() == path.read_bytes()
    assert read_header(path) == ("event", 1, "abc123")


def test_event_columns_and_stream_order(tmp_path):
    record = generate_event(LINE_TRIP_TEMPLATE, n_streams=12, n_samples=20,
                            channels=(ChannelKind.F,), seed=1)
    path = write_event_csv(record, tmp_path / "e.csv")
    frame, _ = read_table(path, "event")
    assert list(frame.columns[:3]) == ["n", "F.0", "F.1"]
    back = read_event_csv(path, "e", 0, 30.0)
    np.testing.assert_array_equal(back.channels[ChannelKind.F][11], record.channels[ChannelKind.F][11])


def test_wrong_schema_and_missing_header(tmp_path):
    record = generate_event(LINE_TRIP_TEMPLATE, n_streams=2, n_samples=10, seed=0)
    path = write_event_csv(record, tmp_path / "e.csv")
    with pytest.raises(SchemaMismatchError):
        read_feature_csv(path)
    bare = tmp_path / "bare.csv"
    bare.write_text("n,F.0\n0,1.0\n", encoding="utf-8")
    with pytest.raises(InputError):
        read_event_csv(bare, "x", 0, 30.0)
    with pytest.raises(InputError):
        read_header(tmp_path / "absent.csv")


def test_bad_stream_column_rejected(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("# schema=event/1 fingerprint=\nn,VPM.0,voltage\n0,1.0,2.0\n1,1.5,2.5\n",
                    encoding="utf-8")
    with pytest.raises(SchemaMismatchError) as info:
        read_event_csv(path, "x", 0, 30.0)
    assert info.value.column == "voltage"


def test_corpus_round_trip_with_onset(tmp_path):
    records = generate_corpus(DEFAULT_TEMPLATES, (2, 1), seed=4, n_streams=3, n_samples=40)
    rows = []
    for i, record in enumerate(records):
        name = f"{record.event_id}.csv"
        write_event_csv(record, tmp_path / name)
        rows.append({"event_id": record.event_id, "file": name, "label": record.label,
                     "sample_rate_hz": record.sample_rate_hz, "onset": 5 if i == 0 else 0})
    write_manifest(list(reversed(rows)), tmp_path)

    loaded = load_corpus(tmp_path)
    assert [r.event_id for r in loaded] == sorted(r.event_id for r in records)
    by_id = {r.event_id: r for r in records}
    first = next(r for r in loaded if r.event_id == records[0].event_id)
    assert first.n_samples == 35
    np.testing.assert_array_equal(first.channels[ChannelKind.VPM],
                                  by_id[first.event_id].channels[ChannelKind.VPM][:, 5:])
    assert load_corpus(tmp_path, windowed=False)[0].n_samples == 40


def test_missing_corpus_dir(tmp_path):
    with pytest.raises(InputError):
        load_corpus(tmp_path / "nowhere")


# ---------------------------------------------------------------------------
# Decompositions
# ---------------------------------------------------------------------------

def test_mode_and_envelope_frames():
    record = generate_event(LINE_TRIP_TEMPLATE, n_streams=5, n_samples=90,
                            channels=(ChannelKind.VPM, ChannelKind.F), seed=2)
    decs = decompose_event(record, PencilConfig(order_p=4))
    keyed = {(record.event_id, kind): dec for kind, dec in decs.items()}
    modes = modes_frame(keyed)
    n_vpm = len(decs[ChannelKind.VPM].modes)
    assert len(modes) == n_vpm + len(decs[ChannelKind.F].modes)
    assert modes["channel"].tolist()[:n_vpm] == ["VPM"] * n_vpm
    assert modes["mode_rank"].tolist()[:n_vpm] == list(range(1, n_vpm + 1))
    # a conjugate pair is one row standing for two poles
    for kind in (ChannelKind.VPM, ChannelKind.F):
        rows = modes[modes["channel"] == kind.value]
        assert len(rows) + int(rows["conjugate"].sum()) == 4
    envelope = envelope_frame(keyed)
    assert envelope["channel"].tolist() == ["VPM", "F"]
    assert (envelope["E_i_min"] <= envelope["E_i_max"]).all()


# ---------------------------------------------------------------------------
# Features, selection, split, model and reports
# ---------------------------------------------------------------------------

def test_feature_csv_round_trip_is_exact(tmp_path):
    data = _dataset()
    path = write_feature_csv(data, tmp_path / "features.csv", fingerprint="f00d")
    back, fp = read_feature_csv(path)
    assert fp == "f00d"
    assert back.feature_names == data.feature_names
    assert back.event_ids == data.event_ids
    np.testing.assert_array_equal(back.labels, data.labels)
    np.testing.assert_array_equal(back.matrix, data.matrix)


def test_selection_files(tmp_path):
    result = bootstrap_select(_dataset(), SelectionConfig(measure=Measure.F, d_prime=2,
                                                          bootstraps=5))
    table, summary = write_selection(result, tmp_path, fingerprint="beef")
    assert read_selected_features(summary) == result.selected_names
    frame, fp = read_table(table, "selection")
    assert fp == "beef"
    assert frame["selected"].sum() == 2
    assert frame.loc[frame["rank"] == 1, "feature"].item() == result.selected_names[0]
    with pytest.raises(SchemaMismatchError):
        read_selected_features(_foreign_json(tmp_path))


def test_split_round_trip(tmp_path):
    path = write_split(["b", "a"], ["c"], tmp_path / "split.csv")
    assert read_split(path) == (("a", "b"), ("c",))


@pytest.mark.parametrize("kind", list(ModelKind))
def test_model_file_round_trip(tmp_path, kind):
    data = _dataset()
    model, _ = fit_pipeline(data, kind, SelectionConfig(measure=Measure.S, d_prime=2,
                                                        bootstraps=5))
    path = save_model(model, tmp_path / "model.json", fingerprint="cafe")
    restored = load_model(path)
    np.testing.assert_array_equal(restored.decision_scores(data), model.decision_scores(data))
    assert json.loads(path.read_text())["fingerprint"] == "cafe"


def test_truncated_model_file_rejected(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"format_version": 1, "kind": "LR"}), encoding="utf-8")
    with pytest.raises(InputError):
        load_model(path)
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(InputError):
        load_model(path)


def test_eval_report_file(tmp_path):
    data = _dataset()
    report = bootstrap_evaluate(data.take(range(0, 20, 2)), data.take(range(1, 20, 2)),
                                ModelKind.LR, B_c=3)
    path = write_eval(report, tmp_path / "eval.json", fingerprint="1234",
                      extra={"selected_features": ["a.x"]})
    payload = json.loads(path.read_text())
    assert payload["bootstraps"] == 3
    assert payload["selected_features"] == ["a.x"]
    assert list(payload) == sorted(payload)


def test_confusion_round_trip(tmp_path):
    matrix = ConfusionMatrix([[40, 10], [5, 45]])
    path = write_confusion(matrix, tmp_path / "confusion.csv")
    frame, _ = read_table(path, "confusion")
    assert frame["true_class"].tolist() == ["line_trip", "generation_loss"]
    assert frame["pct_line_trip"].tolist() == [80.0, 10.0]
    np.testing.assert_array_equal(read_confusion(path).counts, matrix.counts)
