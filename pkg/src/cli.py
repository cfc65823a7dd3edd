"""
Command-line pipeline: synthetic corpus -> modal decomposition -> features ->
bootstrapped selection -> classifiers -> evaluation, plus the k-fold
comparison against the subspace-angle baseline.

Every stage reads the previous stage's files and writes its own; all of
them accept --config (KEY=value file) and --seed and are deterministic.

Usage:
    cd src
    python cli.py synth --out ../runs/corpus
    python cli.py features --events ../runs/corpus --out ../runs/features.csv
    python cli.py select --features ../runs/features.csv --out ../runs/select
    python cli.py eval --features ../runs/features.csv --selection ../runs/select \\
        --out ../runs/eval.json

Exit codes: 0 success, 2 rejected input / usage / config, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from pathlib import Path
from typing import Any, Callable, Sequence

import pandas as pd

from baseline import baseline_kfold_confusion
from core import CLASS_NAMES, ChannelKind, Dataset, EventRecord, InputError, SchemaMismatchError
from feature_selection import Measure, bootstrap_select, zscore_fit_transform
from features import build_dataset, extract_all
from learn import (
    ConfusionMatrix,
    bootstrap_evaluate,
    kfold_confusion,
    roc_auc,
    stratified_split,
    sweep_feature_count,
    train_model,
)
from lib import artifacts
from lib.settings import PipelineSettings, load_settings
from modal import decompose_event, error_curve, model_order_report
from preprocess import detrend_event
from synth import DEFAULT_TEMPLATES, simulate_corpus

logger = logging.getLogger(__name__)

RULE = "=" * 72


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _settings(args: argparse.Namespace) -> PipelineSettings:
    overrides: dict[str, Any] = {}
    for key in ("seed", "workers"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    for flag, key in _OVERRIDE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    return load_settings(args.config, overrides)


def _map(func: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) < 2:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _banner(title: str) -> None:
    print(RULE)
    print(f"  {title}")
    print(RULE)


def _load_features(path: str) -> Dataset:
    data, _ = artifacts.read_feature_csv(path)
    return data


def _column_indices(data: Dataset, names: Sequence[str]) -> list[int]:
    index = {name: i for i, name in enumerate(data.feature_names)}
    for name in names:
        if name not in index:
            raise SchemaMismatchError(f"feature file lacks selected column {name!r}", column=name)
    return [index[name] for name in names]


def _split(data: Dataset, selection_dir: Path) -> tuple[Dataset, Dataset]:
    train_ids, test_ids = artifacts.read_split(selection_dir / "split.csv")
    position = {eid: i for i, eid in enumerate(data.event_ids)}
    missing = [eid for eid in train_ids + test_ids if eid not in position]
    if missing:
        raise InputError(f"split names event {missing[0]!r} absent from the feature file")
    return data.take([position[e] for e in train_ids]), data.take([position[e] for e in test_ids])


def _prepared(settings: PipelineSettings, features_path: str, selection_dir: str):
    """Normalised train/test restricted to the selected features."""
    data = _load_features(features_path)
    selection_dir = Path(selection_dir)
    names = artifacts.read_selected_features(selection_dir / "selection.json")
    indices = _column_indices(data, names)
    raw_train, raw_test = _split(data, selection_dir)
    normalized, stats = zscore_fit_transform(raw_train)
    test = stats.apply(raw_test)
    return (normalized.select_features(indices), test.select_features(indices),
            stats, tuple(indices), raw_test)


def _print_confusion(title: str, matrix: ConfusionMatrix) -> None:
    pct = matrix.row_percentages
    print(f"\n  {title}")
    header = "true / predicted"
    print(f"  {header:<20} {CLASS_NAMES[0]:>18} {CLASS_NAMES[1]:>18}")
    print(f"  {'-' * 58}")
    for row in range(2):
        cells = "".join(f" {matrix.counts[row, c]:>8d} ({pct[row, c]:5.1f}%)" for c in range(2))
        print(f"  {CLASS_NAMES[row]:<20}{cells}")
    print(f"  accuracy {matrix.accuracy:.3f}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    settings = _settings(args)
    out = Path(args.out)
    fingerprint = settings.stage_fingerprint("synth")
    events = simulate_corpus(
        DEFAULT_TEMPLATES, settings.synth_counts, settings.seed,
        n_streams=settings.synth_streams, n_samples=settings.synth_samples,
        sample_period=1.0 / settings.sample_rate_hz, channels=settings.channels,
        snr_db=settings.synth_snr_db,
        include_pre_event=settings.synth_pre_event_s > 0,
        pre_event_seconds=settings.synth_pre_event_s,
    )
    rows = []
    for event in events:
        record = event.record
        artifacts.write_event_csv(record, out / f"{record.event_id}.csv", fingerprint)
        rows.append({"event_id": record.event_id, "file": f"{record.event_id}.csv",
                     "label": record.label, "sample_rate_hz": record.sample_rate_hz,
                     "onset": event.onset})
    artifacts.write_manifest(rows, out, fingerprint)

    _banner("Synthetic corpus")
    for label, count in enumerate(settings.synth_counts):
        print(f"  {CLASS_NAMES[label]:<20} {count:>6d} events")
    print(f"  streams x samples    {settings.synth_streams} x {settings.synth_samples}"
          f"  channels {','.join(c.value for c in settings.channels)}")
    print(f"  written to {out}")
    return 0


def _decompose_one(record: EventRecord, settings: PipelineSettings):
    return decompose_event(detrend_event(record), settings.pencil(), settings.channels)


def cmd_decompose(args: argparse.Namespace) -> int:
    settings = _settings(args)
    records = artifacts.load_corpus(args.events)
    results = _map(partial(_decompose_one, settings=settings), records, settings.workers)

    decs, curves = {}, {}
    for record, per_channel in zip(records, results):
        for kind, dec in per_channel.items():
            decs[(record.event_id, kind)] = dec
            curves[(record.event_id, kind)] = error_curve(dec.singular_values)[: settings.p_max]

    out = Path(args.out)
    fingerprint = settings.stage_fingerprint("decompose")
    artifacts.write_table(artifacts.modes_frame(decs), out / "modes.csv", "modes", fingerprint)
    envelope = artifacts.envelope_frame(decs)
    artifacts.write_table(envelope, out / "envelope.csv", "envelope", fingerprint)
    artifacts.write_table(artifacts.error_curve_frame(curves), out / "error_curves.csv",
                          "error-curves", fingerprint)

    _banner(f"Modal decomposition  (p={settings.pencil_order}, {len(records)} events)")
    print(f"  {'channel':<8} {'max E_p':>12} {'mean E_i':>12} {'max E_i':>12} {'flagged':>8}")
    print(f"  {'-' * 56}")
    for kind in settings.channels:
        rows = envelope[envelope["channel"] == kind.value]
        if rows.empty:
            continue
        flagged = int((rows["flags"].fillna("") != "").sum())
        print(f"  {kind.value:<8} {rows['E_p'].max():>12.3e} {rows['E_i_mean'].mean():>12.3e} "
              f"{rows['E_i_max'].max():>12.3e} {flagged:>8d}")
    return 0


def cmd_order(args: argparse.Namespace) -> int:
    settings = _settings(args)
    records = [detrend_event(r) for r in artifacts.load_corpus(args.events)]
    report = model_order_report(records, settings.pencil(), settings.channels)

    out = Path(args.out)
    fingerprint = settings.stage_fingerprint("order")
    artifacts.write_json({
        "order_p": report.order_p,
        "qualified": report.qualified,
        "error_threshold": settings.error_threshold,
        "p_max": settings.p_max,
        "p_cap": report.p_cap,
        "fingerprint": fingerprint,
    }, out / "order.json")
    frame = pd.DataFrame(
        [{"event_id": eid, "channel": ch, "first_p": first if first is not None else 0}
         for (eid, ch), first in sorted(report.first_passing_E_p.items())],
        columns=["event_id", "channel", "first_p"],
    )
    artifacts.write_table(frame, out / "first_passing.csv", "first-passing", fingerprint)

    _banner("Model-order selection")
    status = "qualified" if report.qualified else f"fallback to p={report.p_cap}"
    print(f"  p = {report.order_p}  ({status}, threshold {settings.error_threshold:g})")
    return 0


def cmd_features(args: argparse.Namespace) -> int:
    settings = _settings(args)
    records = artifacts.load_corpus(args.events)
    vectors = extract_all(records, settings.pencil(), settings.features(), settings.workers)
    data = build_dataset(vectors)
    artifacts.write_feature_csv(data, args.out, settings.stage_fingerprint("features"))

    flagged = sum(1 for v in vectors if v.flags)
    _banner("Feature extraction")
    print(f"  events {len(data)}   d = {data.dimension}   flagged {flagged}")
    print(f"  written to {args.out}")
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    settings = _settings(args)
    data = _load_features(args.features)
    train, test = stratified_split(data, settings.test_fraction, settings.seed)
    normalized, _ = zscore_fit_transform(train)
    result = bootstrap_select(normalized, settings.selection())

    out = Path(args.out)
    fingerprint = settings.stage_fingerprint("select")
    artifacts.write_split(train.event_ids, test.event_ids, out / "split.csv", fingerprint)
    artifacts.write_selection(result, out, fingerprint)

    _banner(f"Feature selection  (measure {result.config.measure.value}, "
            f"B_s={result.config.bootstraps}, train {len(train)} / test {len(test)})")
    print(f"  {'rank':>4}  {'feature':<32} {'p95 score':>12} {'mean':>12}")
    print(f"  {'-' * 64}")
    for rank, idx in enumerate(result.selected_indices, start=1):
        print(f"  {rank:>4}  {result.feature_names[idx]:<32} "
              f"{result.percentile_scores[idx]:>12.4g} {result.mean_scores[idx]:>12.4g}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    settings = _settings(args)
    train, test, stats, indices, _ = _prepared(settings, args.features, args.selection)
    model = train_model(train, settings.model_kind, settings.learner(),
                        norm_stats=stats, selected_indices=indices)
    artifacts.save_model(model, args.out, settings.stage_fingerprint("train"))

    _banner(f"Training  ({model.kind.value})")
    print(f"  converged {model.converged} after {model.iterations} iterations")
    print(f"  test AUC  {roc_auc(model.decision_function(test.matrix), test.labels):.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings(args)
    train, test, stats, indices, raw_test = _prepared(settings, args.features, args.selection)
    report = bootstrap_evaluate(train, test, settings.model_kind, settings.bootstraps_c,
                                settings.seed, settings.learner(), settings.workers)
    model = train_model(train, settings.model_kind, settings.learner(),
                        norm_stats=stats, selected_indices=indices)
    predicted = model.predict(raw_test, settings.threshold)
    report = replace(report, confusion=ConfusionMatrix.from_predictions(raw_test.labels, predicted))
    artifacts.write_eval(report, args.out, settings.stage_fingerprint("eval"),
                         {"selected_features": list(train.feature_names)})

    _banner(f"Bootstrap evaluation  ({report.model_kind.value}, B_c={settings.bootstraps_c})")
    print(f"  AUC mean {report.auc_mean:.4f}   p5 {report.auc_p5:.4f}   p95 {report.auc_p95:.4f}")
    _print_confusion("Single model on the test set", report.confusion)
    return 0


def cmd_kfold(args: argparse.Namespace) -> int:
    settings = _settings(args)
    data = _load_features(args.features)
    if args.channels:
        data = data.channel_subset(ChannelKind.parse(c) for c in args.channels.split(","))
    selection = None if args.no_select else settings.selection()
    if selection is not None and selection.d_prime > data.dimension:
        selection = replace(selection, d_prime=data.dimension)
    matrix = kfold_confusion(data, settings.model_kind, settings.folds, settings.threshold,
                             settings.seed, selection, settings.learner())
    artifacts.write_confusion(matrix, args.out, settings.stage_fingerprint("kfold"))

    _banner(f"{settings.folds}-fold confusion  ({settings.model_kind.value}, d={data.dimension})")
    _print_confusion("Pooled out-of-fold predictions", matrix)
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    settings = _settings(args)
    records = artifacts.load_corpus(args.events)
    matrix = baseline_kfold_confusion(records, settings.folds, settings.seed,
                                      settings.baseline_rank, settings.baseline_window,
                                      settings.baseline_aggregate)
    artifacts.write_confusion(matrix, args.out, settings.stage_fingerprint("baseline"))

    _banner(f"Subspace-angle baseline  (r={settings.baseline_rank}, "
            f"N={settings.baseline_window}, VPM only)")
    _print_confusion("Pooled out-of-fold predictions", matrix)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = _settings(args)
    data = _load_features(args.features)
    raw_train, raw_test = _split(data, Path(args.selection))
    measures = [Measure.parse(m) for m in args.measures.split(",")]
    d_primes = [int(d) for d in args.d_primes.split(",")]
    frame = sweep_feature_count(raw_train, raw_test, measures, d_primes, settings.model_kind,
                                settings.selection(), settings.bootstraps_c, settings.seed,
                                settings.learner(), settings.workers)
    artifacts.write_table(frame, args.out, "sweep", settings.stage_fingerprint("sweep"))

    _banner(f"AUC against d'  ({settings.model_kind.value})")
    print(f"  {'measure':<8} {'d_prime':>8} {'mean':>8} {'p5':>8} {'p95':>8}")
    print(f"  {'-' * 44}")
    for row in frame.itertuples(index=False):
        print(f"  {row.measure:<8} {row.d_prime:>8d} {row.auc_mean:>8.4f} "
              f"{row.auc_p5:>8.4f} {row.auc_p95:>8.4f}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

# flag dest -> settings key
_OVERRIDE_FLAGS = {
    "order_p": "pencil_order",
    "measure": "measure",
    "d_prime": "d_prime",
    "bootstraps_s": "bootstraps_s",
    "bootstraps_c": "bootstraps_c",
    "model": "model_kind",
    "folds": "folds",
    "counts": "synth_counts",
    "streams": "synth_streams",
    "samples": "synth_samples",
    "snr_db": "synth_snr_db",
    "p_prime": "p_prime",
    "m_prime": "m_prime",
    "channels_cfg": "channels",
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="KEY=value pipeline config file")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--workers", type=int, help="worker processes for per-event work")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmu-events",
                                     description="PMU event identification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labelled synthetic corpus")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--counts", help="events per class, e.g. 400,400")
    p.add_argument("--streams", type=int, help="PMUs per event (m)")
    p.add_argument("--samples", type=int, help="post-event samples (N)")
    p.add_argument("--snr-db", dest="snr_db", help="fixed SNR in dB ('inf' for noise-free)")
    p.add_argument("--channels", dest="channels_cfg", help="channels, e.g. VPM,VPA,F")
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (("decompose", cmd_decompose, "modal decomposition report"),
                                 ("order", cmd_order, "model-order selection")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--events", required=True, help="corpus directory")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--order", dest="order_p", type=int, help="pencil order p")
        p.add_argument("--channels", dest="channels_cfg", help="channels to analyse")
        p.set_defaults(func=func)

    p = sub.add_parser("features", help="build the feature CSV")
    _common(p)
    p.add_argument("--events", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="feature CSV path")
    p.add_argument("--order", dest="order_p", type=int, help="pencil order p")
    p.add_argument("--p-prime", dest="p_prime", type=int)
    p.add_argument("--m-prime", dest="m_prime", type=int)
    p.add_argument("--channels", dest="channels_cfg", help="channels, e.g. VPM,VPA,F")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("select", help="split and bootstrap-select features")
    _common(p)
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--measure", choices=["F", "S", "M"])
    p.add_argument("--d-prime", dest="d_prime", type=int)
    p.add_argument("--bootstraps", dest="bootstraps_s", type=int, help="B_s")
    p.set_defaults(func=cmd_select)

    for name, func, helptext in (("train", cmd_train, "train one classifier"),
                                 ("eval", cmd_eval, "bootstrap AUC evaluation")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--features", required=True, help="feature CSV")
        p.add_argument("--selection", required=True, help="select-stage directory")
        p.add_argument("--out", required=True, help="output file")
        p.add_argument("--model", choices=["LR", "SVM_RBF"])
        p.add_argument("--bootstraps", dest="bootstraps_c", type=int, help="B_c")
        p.set_defaults(func=func)

    p = sub.add_parser("kfold", help="stratified k-fold confusion matrix")
    _common(p)
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--out", required=True, help="confusion CSV path")
    p.add_argument("--model", choices=["LR", "SVM_RBF"])
    p.add_argument("--folds", type=int)
    p.add_argument("--channels", help="restrict to these channels, e.g. VPM")
    p.add_argument("--no-select", action="store_true", help="train on all features")
    p.add_argument("--measure", choices=["F", "S", "M"])
    p.add_argument("--d-prime", dest="d_prime", type=int)
    p.add_argument("--bootstraps", dest="bootstraps_s", type=int, help="B_s")
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("baseline", help="subspace-angle baseline confusion matrix")
    _common(p)
    p.add_argument("--events", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="confusion CSV path")
    p.add_argument("--folds", type=int)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep", help="AUC against d' per measure")
    _common(p)
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--selection", required=True, help="select-stage directory (for the split)")
    p.add_argument("--out", required=True, help="sweep CSV path")
    p.add_argument("--measures", default="F,S,M")
    p.add_argument("--d-primes", dest="d_primes", default="1,2,5,10,20")
    p.add_argument("--model", choices=["LR", "SVM_RBF"])
    p.add_argument("--bootstraps", dest="bootstraps_c", type=int, help="B_c")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.debug("stage failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
