"""
Stage artifacts — every file one pipeline stage hands to the next.

Tabular files are CSV written with pandas. Their first line is a comment

    # schema=<name>/<version> fingerprint=<16 hex digits>

naming the table layout and the settings that produced it; readers check the
schema and skip the comment. Floats are written with 17 significant digits
and read back with the round-trip parser, so values survive exactly. JSON
files are written with sorted keys. Nothing time- or host-dependent is ever
written, so reruns reproduce files byte for byte.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from core import (
    CLASS_NAMES,
    ChannelKind,
    Dataset,
    EventRecord,
    FeatureVector,
    InputError,
    ModalDecomposition,
    SchemaMismatchError,
)
from feature_selection import SelectionResult
from learn import ConfusionMatrix, EvalReport, TrainedModel
from modal import error_envelope
from preprocess import event_window

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.csv"

_HEADER = re.compile(r"^# schema=(?P<schema>[\w-]+)/(?P<version>\d+) fingerprint=(?P<fp>\w*)")
_STREAM_COLUMN = re.compile(r"^(?P<channel>[A-Z]+)\.(?P<stream>\d+)$")


# ---------------------------------------------------------------------------
# Generic CSV / JSON
# ---------------------------------------------------------------------------

def write_table(frame: pd.DataFrame, path: str | Path, schema: str, fingerprint: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# schema={schema}/{SCHEMA_VERSION} fingerprint={fingerprint}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_header(path: str | Path) -> tuple[str, int, str]:
    """(schema, version, fingerprint) from a table's comment line."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with open(path, encoding="utf-8") as handle:
        first = handle.readline()
    match = _HEADER.match(first)
    if not match:
        raise InputError(f"{path.name}: missing '# schema=...' header line")
    return match["schema"], int(match["version"]), match["fp"]


def read_table(path: str | Path, schema: str) -> tuple[pd.DataFrame, str]:
    """Table body plus fingerprint; rejects a file written for another schema."""
    found, version, fingerprint = read_header(path)
    if found != schema or version != SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"{Path(path).name}: expected schema {schema}/{SCHEMA_VERSION}, "
            f"found {found}/{version}"
        )
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    return frame, fingerprint


def write_json(payload: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_json(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path.name}: malformed JSON ({exc})") from None


def require_columns(frame: pd.DataFrame, columns: Sequence[str], name: str) -> None:
    for column in columns:
        if column not in frame.columns:
            raise SchemaMismatchError(f"{name}: missing column {column!r}", column=column)


# ---------------------------------------------------------------------------
# Events and manifest
# ---------------------------------------------------------------------------

def event_frame(record: EventRecord) -> pd.DataFrame:
    """Column "n" then one "<channel>.<stream>" column per stream."""
    columns: dict[str, np.ndarray] = {"n": np.arange(record.n_samples)}
    for kind, data in record.channels.items():
        for i, row in enumerate(data):
            columns[f"{kind.value}.{i}"] = row
    return pd.DataFrame(columns)


def write_event_csv(record: EventRecord, path: str | Path, fingerprint: str = "") -> Path:
    return write_table(event_frame(record), path, "event", fingerprint)


def read_event_csv(path: str | Path, event_id: str, label: int,
                   sample_rate_hz: float) -> EventRecord:
    frame, _ = read_table(path, "event")
    if frame.columns[0] != "n":
        raise SchemaMismatchError(f"{Path(path).name}: first column must be 'n'",
                                  column=str(frame.columns[0]))
    if not np.array_equal(frame["n"].to_numpy(), np.arange(len(frame))):
        raise InputError(f"{Path(path).name}: sample index must run 0..N-1")

    streams: dict[ChannelKind, list[tuple[int, str]]] = {}
    for column in frame.columns[1:]:
        match = _STREAM_COLUMN.match(str(column))
        if not match:
            raise SchemaMismatchError(f"{Path(path).name}: bad stream column {column!r}",
                                      column=str(column))
        kind = ChannelKind.parse(match["channel"])
        streams.setdefault(kind, []).append((int(match["stream"]), str(column)))

    channels = {
        kind: frame[[col for _, col in sorted(cols)]].to_numpy(dtype=float).T
        for kind, cols in streams.items()
    }
    return EventRecord(event_id=event_id, label=int(label), channels=channels,
                       sample_rate_hz=float(sample_rate_hz))


def write_manifest(rows: Sequence[dict[str, Any]], directory: str | Path,
                   fingerprint: str = "") -> Path:
    frame = pd.DataFrame(rows, columns=["event_id", "file", "label", "sample_rate_hz", "onset"])
    frame = frame.sort_values("event_id", kind="stable").reset_index(drop=True)
    return write_table(frame, Path(directory) / MANIFEST_NAME, "manifest", fingerprint)


def load_corpus(directory: str | Path, windowed: bool = True) -> list[EventRecord]:
    """Every event listed in the manifest, sorted by event_id.

    With windowed=True each record starts at its manifest onset.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"event directory not found: {directory}")
    manifest, _ = read_table(directory / MANIFEST_NAME, "manifest")
    require_columns(manifest, ["event_id", "file", "label", "sample_rate_hz"], MANIFEST_NAME)

    records = []
    for row in manifest.sort_values("event_id", kind="stable").itertuples(index=False):
        record = read_event_csv(directory / row.file, str(row.event_id), int(row.label),
                                float(row.sample_rate_hz))
        onset = int(getattr(row, "onset", 0) or 0)
        if windowed and onset:
            record = event_window(record, onset, record.n_samples - onset)
        records.append(record)
    return records


# ---------------------------------------------------------------------------
# Decompositions
# ---------------------------------------------------------------------------

def modes_frame(decompositions: dict[tuple[str, ChannelKind], ModalDecomposition]) -> pd.DataFrame:
    rows = []
    for (event_id, kind), dec in sorted(decompositions.items(),
                                        key=lambda item: (item[0][0], item[0][1].rank)):
        for rank, mode in enumerate(dec.modes, start=1):
            rows.append({
                "event_id": event_id,
                "channel": kind.value,
                "mode_rank": rank,
                "sigma": mode.damping_sigma,
                "omega": mode.angular_freq_omega,
                "frequency_hz": mode.frequency_hz,
                "average_residue": mode.average_residue,
                "conjugate": int(mode.conjugate),
            })
    return pd.DataFrame(rows, columns=["event_id", "channel", "mode_rank", "sigma", "omega",
                                       "frequency_hz", "average_residue", "conjugate"])


def envelope_frame(decompositions: dict[tuple[str, ChannelKind], ModalDecomposition]
                   ) -> pd.DataFrame:
    rows = []
    for (event_id, kind), dec in sorted(decompositions.items(),
                                        key=lambda item: (item[0][0], item[0][1].rank)):
        lo, mean, hi = error_envelope(dec)
        rows.append({
            "event_id": event_id,
            "channel": kind.value,
            "order_p": dec.pencil_order_p,
            "pencil_L": dec.pencil_L,
            "E_p": dec.rank_error_E_p,
            "E_i_min": lo,
            "E_i_mean": mean,
            "E_i_max": hi,
            "flags": ";".join(dec.flags),
        })
    return pd.DataFrame(rows, columns=["event_id", "channel", "order_p", "pencil_L", "E_p",
                                       "E_i_min", "E_i_mean", "E_i_max", "flags"])


def error_curve_frame(curves: dict[tuple[str, ChannelKind], np.ndarray]) -> pd.DataFrame:
    rows = [
        {"event_id": event_id, "channel": kind.value, "p": p, "E_p": float(value)}
        for (event_id, kind), curve in sorted(curves.items(),
                                              key=lambda item: (item[0][0], item[0][1].rank))
        for p, value in enumerate(curve, start=1)
    ]
    return pd.DataFrame(rows, columns=["event_id", "channel", "p", "E_p"])


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def write_feature_csv(data: Dataset, path: str | Path, fingerprint: str = "") -> Path:
    """event_id, the feature columns in schema order, then label."""
    frame = pd.DataFrame(data.matrix, columns=list(data.feature_names))
    frame.insert(0, "event_id", list(data.event_ids))
    frame["label"] = data.labels
    return write_table(frame, path, "features", fingerprint)


def read_feature_csv(path: str | Path) -> tuple[Dataset, str]:
    frame, fingerprint = read_table(path, "features")
    require_columns(frame, ["event_id", "label"], Path(path).name)
    if frame.columns[0] != "event_id" or frame.columns[-1] != "label":
        raise SchemaMismatchError(f"{Path(path).name}: expected event_id first and label last")
    names = tuple(str(c) for c in frame.columns[1:-1])
    rows = tuple(
        FeatureVector(event_id=str(eid), label=int(lbl), values=vals, names=names)
        for eid, lbl, vals in zip(frame["event_id"], frame["label"],
                                  frame[list(names)].to_numpy(dtype=float))
    )
    return Dataset(rows=rows, feature_names=names), fingerprint


# ---------------------------------------------------------------------------
# Selection, split, model, evaluation
# ---------------------------------------------------------------------------

def selection_frame(result: SelectionResult) -> pd.DataFrame:
    rank = {idx: r for r, idx in enumerate(result.selected_indices, start=1)}
    return pd.DataFrame({
        "feature": list(result.feature_names),
        "mean_score": result.mean_scores,
        "percentile_score": result.percentile_scores,
        "selected": [int(i in rank) for i in range(len(result.feature_names))],
        "rank": [rank.get(i, 0) for i in range(len(result.feature_names))],
    })


def write_selection(result: SelectionResult, directory: str | Path,
                    fingerprint: str = "") -> tuple[Path, Path]:
    """selection.csv (per-feature scores) and selection.json (the choice)."""
    directory = Path(directory)
    table = write_table(selection_frame(result), directory / "selection.csv", "selection",
                        fingerprint)
    cfg = result.config
    summary = write_json({
        "schema": f"selection/{SCHEMA_VERSION}",
        "fingerprint": fingerprint,
        "measure": cfg.measure.value,
        "d_prime": cfg.d_prime,
        "bootstraps": cfg.bootstraps,
        "percentile": cfg.percentile,
        "knn_k": cfg.knn_k,
        "seed": cfg.seed,
        "selected_features": list(result.selected_names),
        "redraws": result.redraws,
        "flags": list(result.flags),
    }, directory / "selection.json")
    return table, summary


def read_selected_features(path: str | Path) -> tuple[str, ...]:
    payload = read_json(path)
    if payload.get("schema") != f"selection/{SCHEMA_VERSION}":
        raise SchemaMismatchError(f"{Path(path).name}: not a selection report")
    return tuple(payload["selected_features"])


def write_split(train_ids: Sequence[str], test_ids: Sequence[str], path: str | Path,
                fingerprint: str = "") -> Path:
    frame = pd.DataFrame(
        [(eid, "train") for eid in train_ids] + [(eid, "test") for eid in test_ids],
        columns=["event_id", "split"],
    ).sort_values("event_id", kind="stable")
    return write_table(frame, path, "split", fingerprint)


def read_split(path: str | Path) -> tuple[tuple[str, ...], tuple[str, ...]]:
    frame, _ = read_table(path, "split")
    require_columns(frame, ["event_id", "split"], Path(path).name)
    ids = frame["event_id"].astype(str)
    return tuple(ids[frame["split"] == "train"]), tuple(ids[frame["split"] == "test"])


def save_model(model: TrainedModel, path: str | Path, fingerprint: str = "") -> Path:
    payload = model.to_dict()
    payload["fingerprint"] = fingerprint
    return write_json(payload, path)


def load_model(path: str | Path) -> TrainedModel:
    payload = read_json(path)
    try:
        return TrainedModel.from_dict(payload)
    except KeyError as exc:
        raise InputError(f"{Path(path).name}: model file lacks {exc}") from None


def write_eval(report: EvalReport, path: str | Path, fingerprint: str = "",
               extra: dict[str, Any] | None = None) -> Path:
    payload = report.to_dict()
    payload["fingerprint"] = fingerprint
    payload.update(extra or {})
    return write_json(payload, path)


def confusion_frame(matrix: ConfusionMatrix) -> pd.DataFrame:
    pct = matrix.row_percentages
    return pd.DataFrame({
        "true_class": [CLASS_NAMES[0], CLASS_NAMES[1]],
        f"pred_{CLASS_NAMES[0]}": matrix.counts[:, 0],
        f"pred_{CLASS_NAMES[1]}": matrix.counts[:, 1],
        f"pct_{CLASS_NAMES[0]}": pct[:, 0],
        f"pct_{CLASS_NAMES[1]}": pct[:, 1],
    })


def write_confusion(matrix: ConfusionMatrix, path: str | Path, fingerprint: str = "") -> Path:
    return write_table(confusion_frame(matrix), path, "confusion", fingerprint)


def read_confusion(path: str | Path) -> ConfusionMatrix:
    frame, _ = read_table(path, "confusion")
    columns = [f"pred_{CLASS_NAMES[0]}", f"pred_{CLASS_NAMES[1]}"]
    require_columns(frame, columns, Path(path).name)
    return ConfusionMatrix(frame[columns].to_numpy(dtype=int))
