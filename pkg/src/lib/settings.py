"""
Pipeline settings — one KEY=value file for every stage.

The file uses the same dotenv syntax as the API's .env, so it is parsed with
python-dotenv. Precedence: built-in defaults < config file < CLI overrides.

    PENCIL_ORDER=6
    MEASURE=M
    D_PRIME=10
    CHANNELS=VPM,VPA,F
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from dotenv import dotenv_values

from core import ChannelKind, ConfigError, DEFAULT_SAMPLE_RATE_HZ, InputError
from feature_selection import Measure, SelectionConfig
from features import FeatureConfig
from learn import LearnerConfig, ModelKind
from modal import PencilConfig


@dataclass(frozen=True)
class PipelineSettings:
    # modal analysis
    pencil_order: int = 6
    pencil_l: int | str = "auto"
    error_threshold: float = 0.01
    p_max: int = 20
    # features
    p_prime: int = 3
    m_prime: int = 20
    channels: tuple[ChannelKind, ...] = (ChannelKind.VPM, ChannelKind.VPA, ChannelKind.F)
    # selection
    measure: Measure = Measure.M
    d_prime: int = 10
    bootstraps_s: int = 200
    percentile: float = 95.0
    knn_k: int = 3
    # learners
    model_kind: ModelKind = ModelKind.SVM_RBF
    lr_lambda: float = 1e-2
    lr_max_iters: int = 5000
    lr_tol: float = 1e-6
    svm_c: float = 1.0
    svm_gamma: float | str = "auto"
    svm_max_iters: int = 100_000
    svm_tol: float = 1e-3
    # evaluation
    bootstraps_c: int = 200
    folds: int = 5
    test_fraction: float = 0.25
    threshold: float = 0.5
    seed: int = 0
    workers: int = 1
    # baseline
    baseline_rank: int = 5
    baseline_window: int = 300
    baseline_aggregate: str = "mean"
    # synthetic corpus
    synth_streams: int = 95
    synth_samples: int = 300
    synth_counts: tuple[int, ...] = (400, 400)
    synth_snr_db: float | None = None
    synth_pre_event_s: float = 1.0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def pencil(self) -> PencilConfig:
        return PencilConfig(order_p=self.pencil_order, pencil_L=self.pencil_l,
                            error_threshold=self.error_threshold, p_max=self.p_max)

    def features(self) -> FeatureConfig:
        return FeatureConfig(p_prime=self.p_prime, m_prime=self.m_prime, channels=self.channels)

    def selection(self) -> SelectionConfig:
        return SelectionConfig(measure=self.measure, d_prime=self.d_prime,
                               bootstraps=self.bootstraps_s, percentile=self.percentile,
                               knn_k=self.knn_k, seed=self.seed)

    def learner(self) -> LearnerConfig:
        return LearnerConfig(lr_lambda=self.lr_lambda, lr_max_iters=self.lr_max_iters,
                             lr_tol=self.lr_tol, svm_c=self.svm_c, svm_gamma=self.svm_gamma,
                             svm_max_iters=self.svm_max_iters, svm_tol=self.svm_tol)

    def fingerprint(self, names: Iterable[str] | None = None) -> str:
        """First 16 hex digits of the SHA-256 of the canonical JSON of the
        named settings (all settings when names is None)."""
        payload = {key: _jsonable(value) for key, value in asdict(self).items()
                   if names is None or key in set(names)}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def stage_fingerprint(self, stage: str) -> str:
        return self.fingerprint(STAGE_SETTINGS[stage])

    def as_env(self) -> str:
        """The settings as config-file text (round-trips through load_settings)."""
        lines = [f"{name.upper()}={_format(getattr(self, name))}" for name in _FIELD_NAMES]
        return "\n".join(lines) + "\n"


# Which settings shape each stage's output.
_SYNTH = ("synth_streams", "synth_samples", "synth_counts", "synth_snr_db",
          "synth_pre_event_s", "sample_rate_hz", "channels", "seed")
_PENCIL = ("pencil_order", "pencil_l", "error_threshold", "p_max")
_FEATURES = _PENCIL + ("p_prime", "m_prime", "channels")
_SELECT = _FEATURES + ("measure", "d_prime", "bootstraps_s", "percentile", "knn_k",
                       "test_fraction", "seed")
_LEARN = ("model_kind", "lr_lambda", "lr_max_iters", "lr_tol", "svm_c", "svm_gamma",
          "svm_max_iters", "svm_tol")
STAGE_SETTINGS: dict[str, tuple[str, ...]] = {
    "synth": _SYNTH,
    "decompose": _PENCIL,
    "order": _PENCIL,
    "features": _FEATURES,
    "select": _SELECT,
    "train": _SELECT + _LEARN,
    "eval": _SELECT + _LEARN + ("bootstraps_c",),
    "kfold": _FEATURES + _LEARN + ("measure", "d_prime", "bootstraps_s", "percentile",
                                   "knn_k", "folds", "threshold", "seed"),
    "baseline": ("baseline_rank", "baseline_window", "baseline_aggregate", "folds", "seed"),
    "sweep": _SELECT + _LEARN + ("bootstraps_c",),
}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("nan")
    return value


def _auto_or_int(text: str) -> int | str:
    return "auto" if text.strip().lower() == "auto" else int(text)


def _auto_or_float(text: str) -> float | str:
    return "auto" if text.strip().lower() == "auto" else _float(text)


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else _float(text)


def _channels(text: str) -> tuple[ChannelKind, ...]:
    names = [part for part in text.split(",") if part.strip()]
    if not names:
        raise ValueError("empty channel list")
    return tuple(sorted({ChannelKind.parse(name) for name in names}))


def _counts(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _aggregate(text: str) -> str:
    value = text.strip().lower()
    if value not in ("mean", "max"):
        raise ValueError(value)
    return value


_PARSERS: dict[str, Callable[[str], Any]] = {
    "pencil_order": _int, "pencil_l": _auto_or_int, "error_threshold": _float,
    "p_max": _int, "p_prime": _int, "m_prime": _int, "channels": _channels,
    "measure": Measure.parse, "d_prime": _int, "bootstraps_s": _int,
    "percentile": _float, "knn_k": _int, "model_kind": ModelKind.parse,
    "lr_lambda": _float, "lr_max_iters": _int, "lr_tol": _float, "svm_c": _float,
    "svm_gamma": _auto_or_float, "svm_max_iters": _int, "svm_tol": _float,
    "bootstraps_c": _int, "folds": _int, "test_fraction": _float, "threshold": _float,
    "seed": _int, "workers": _int, "baseline_rank": _int, "baseline_window": _int,
    "baseline_aggregate": _aggregate, "synth_streams": _int, "synth_samples": _int,
    "synth_counts": _counts, "synth_snr_db": _optional_float,
    "synth_pre_event_s": _float, "sample_rate_hz": _float,
}
_FIELD_NAMES = tuple(f.name for f in fields(PipelineSettings))
_ENUM_TYPES = (ChannelKind, Measure, ModelKind)


def _jsonable(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, _ENUM_TYPES):
        return value.value
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, _ENUM_TYPES):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: str, raw: Any) -> Any:
    """Convert one KEY (file spelling) or field name and its raw value."""
    name = key.strip().lower()
    if name not in _PARSERS:
        raise ConfigError(f"unknown config key {key.strip().upper()!r}")
    if not isinstance(raw, str):
        return raw
    try:
        return _PARSERS[name](raw)
    except (ValueError, InputError) as exc:
        raise ConfigError(f"bad value for {name.upper()}: {raw!r} ({exc})") from None


def _validate(settings: PipelineSettings) -> PipelineSettings:
    try:
        settings.pencil()
        settings.features()
        settings.selection()
        settings.learner()
    except InputError as exc:
        raise ConfigError(str(exc)) from None
    checks = [
        (settings.bootstraps_c >= 1, "BOOTSTRAPS_C must be >= 1"),
        (settings.folds >= 2, "FOLDS must be >= 2"),
        (0.0 < settings.test_fraction < 1.0, "TEST_FRACTION must be in (0, 1)"),
        (0.0 < settings.threshold < 1.0, "THRESHOLD must be in (0, 1)"),
        (settings.workers >= 1, "WORKERS must be >= 1"),
        (settings.baseline_rank >= 1, "BASELINE_RANK must be >= 1"),
        (settings.baseline_window >= 1, "BASELINE_WINDOW must be >= 1"),
        (settings.synth_streams >= 1 and settings.synth_samples >= 4,
         "SYNTH_STREAMS must be >= 1 and SYNTH_SAMPLES >= 4"),
        (len(settings.synth_counts) == 2 and min(settings.synth_counts) >= 0
         and sum(settings.synth_counts) >= 1,
         "SYNTH_COUNTS must be two non-negative counts with a positive total"),
        (settings.synth_pre_event_s >= 0, "SYNTH_PRE_EVENT_S must be >= 0"),
        (settings.sample_rate_hz > 0, "SAMPLE_RATE_HZ must be positive"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    return settings


def load_settings(path: str | Path | None = None,
                  overrides: Mapping[str, Any] | None = None) -> PipelineSettings:
    """Defaults, then the config file at `path`, then `overrides` (None values skipped)."""
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for key, raw in dotenv_values(path).items():
            if raw is None:
                raise ConfigError(f"config key {key!r} has no value")
            values[key.strip().lower()] = parse_value(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key.strip().lower()] = parse_value(key, raw)
    return _validate(replace(PipelineSettings(), **values))
