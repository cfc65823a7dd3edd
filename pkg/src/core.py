"""
Core domain types for PMU event identification.

Every stage of the pipeline (detrending, modal analysis, feature assembly,
feature selection, learning, the subspace baseline) passes these objects
around. Nothing in here runs an algorithm; the only logic is shape
normalisation and the report-style validator.

All types are frozen after construction. Numpy payloads are copied and
marked read-only, so records can be handed to worker processes as they
are.

Depends on: nothing inside the project.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

LINE_TRIP = 0
GENERATION_LOSS = 1
CLASS_LABELS = (LINE_TRIP, GENERATION_LOSS)
CLASS_NAMES = {LINE_TRIP: "line_trip", GENERATION_LOSS: "generation_loss"}

DEFAULT_SAMPLE_RATE_HZ = 30.0
MIN_SAMPLES = 4  # smallest window any pencil can be built on


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class InputError(ValueError):
    """Input rejected by a pipeline operation."""


class SchemaMismatchError(InputError):
    """Two pipeline artifacts disagree on their feature/column schema."""

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class ConfigError(InputError):
    """Malformed or unknown configuration value."""


class UnderdeterminedSignalError(InputError):
    """The pencil produced fewer than p numerically nonzero eigenvalues."""

    def __init__(self, message: str, found: int):
        super().__init__(message)
        self.found = found


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

class ChannelKind(enum.Enum):
    """PMU measurement channel. Declaration order is the canonical order."""
    VPM = "VPM"   # positive sequence voltage magnitude
    VPA = "VPA"   # positive sequence voltage angle
    IPM = "IPM"   # positive sequence current magnitude
    IPA = "IPA"   # positive sequence current angle
    F = "F"       # frequency

    @property
    def rank(self) -> int:
        return CHANNEL_ORDER.index(self)

    def __lt__(self, other: ChannelKind) -> bool:
        if not isinstance(other, ChannelKind):
            return NotImplemented
        return self.rank < other.rank

    @classmethod
    def parse(cls, name) -> ChannelKind:
        if isinstance(name, cls):
            return name
        try:
            return cls(name.strip().upper())
        except ValueError:
            raise InputError(f"unknown channel {name!r}") from None


CHANNEL_ORDER: tuple[ChannelKind, ...] = tuple(ChannelKind)


def canonical_channels(channels: Iterable[ChannelKind]) -> tuple[ChannelKind, ...]:
    """Deduplicate and sort channels into canonical VPM < VPA < IPM < IPA < F order."""
    return tuple(sorted(set(channels)))


def _frozen_array(values, dtype=float, ndim: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(1, -1)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Event records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventRecord:
    """One event window: per-channel (m streams x N samples) matrices plus label.

    label: 0 = line trip, 1 = generation loss.
    """
    event_id: str
    label: int
    channels: Mapping[ChannelKind, np.ndarray]
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ

    def __post_init__(self):
        ordered = {
            kind: _frozen_array(self.channels[kind], ndim=2)
            for kind in canonical_channels(self.channels)
        }
        object.__setattr__(self, "channels", ordered)

    @property
    def sample_period(self) -> float:
        return 1.0 / self.sample_rate_hz

    @property
    def channel_kinds(self) -> tuple[ChannelKind, ...]:
        return tuple(self.channels)

    @property
    def n_samples(self) -> int:
        if not self.channels:
            return 0
        return next(iter(self.channels.values())).shape[1]

    def n_streams(self, channel: ChannelKind) -> int:
        return self.channels[channel].shape[0]

    def with_channels(self, channels: Mapping[ChannelKind, np.ndarray]) -> EventRecord:
        """Copy of this record with new channel data; id, label and rate kept."""
        return EventRecord(
            event_id=self.event_id,
            label=self.label,
            channels=channels,
            sample_rate_hz=self.sample_rate_hz,
        )


def validate_event(record: EventRecord) -> list[str]:
    """Report every invariant violation of an EventRecord (empty list = valid)."""
    problems: list[str] = []

    if record.label not in CLASS_LABELS:
        problems.append(f"label {record.label!r} not in {{0, 1}}")
    if not (isinstance(record.sample_rate_hz, (int, float))
            and math.isfinite(record.sample_rate_hz) and record.sample_rate_hz > 0):
        problems.append(f"sample rate {record.sample_rate_hz!r} must be a positive number")
    if not record.channels:
        problems.append("event has no channels")
        return problems

    ref_kind = record.channel_kinds[0]
    ref_n = record.n_samples
    if ref_n < MIN_SAMPLES:
        problems.append(f"channel {ref_kind.value} has {ref_n} samples, need >= {MIN_SAMPLES}")

    for kind, data in record.channels.items():
        if data.ndim != 2 or data.shape[0] == 0:
            problems.append(f"channel {kind.value} has no streams")
            continue
        if data.shape[1] != ref_n:
            problems.append(f"channel {kind.value} length {data.shape[1]} ≠ {ref_n}")
        bad = np.argwhere(~np.isfinite(data))
        if bad.size:
            stream, n = (int(v) for v in bad[0])
            problems.append(f"non-finite sample at ({kind.value}, stream {stream}, n={n})")

    return problems


# ---------------------------------------------------------------------------
# Modal results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mode:
    """One damped sinusoidal mode shared by all streams of a channel.

    damping_sigma is in 1/s, angular_freq_omega in rad/s. Residues are stored
    as parallel magnitude / angle (radians) arrays, one entry per stream.
    conjugate marks a mode that stands for a complex-conjugate pair.
    """
    damping_sigma: float
    angular_freq_omega: float
    residue_magnitudes: np.ndarray
    residue_angles: np.ndarray
    conjugate: bool = False

    def __post_init__(self):
        mags = _frozen_array(self.residue_magnitudes)
        angles = _frozen_array(self.residue_angles)
        if mags.shape != angles.shape:
            raise InputError("residue magnitudes and angles differ in length")
        object.__setattr__(self, "residue_magnitudes", mags)
        object.__setattr__(self, "residue_angles", angles)

    @property
    def residues(self) -> list[tuple[float, float]]:
        return list(zip(self.residue_magnitudes.tolist(), self.residue_angles.tolist()))

    @property
    def n_streams(self) -> int:
        return int(self.residue_magnitudes.shape[0])

    @property
    def average_residue(self) -> float:
        if self.n_streams == 0:
            return 0.0
        return float(np.mean(self.residue_magnitudes))

    @property
    def frequency_hz(self) -> float:
        return self.angular_freq_omega / (2.0 * math.pi)

    @classmethod
    def zero(cls, n_streams: int) -> Mode:
        """Placeholder mode used for padding (sigma = omega = 0, zero residues)."""
        return cls(0.0, 0.0, np.zeros(n_streams), np.zeros(n_streams))


@dataclass(frozen=True)
class ModalDecomposition:
    """The p-mode fit of one channel group plus its error diagnostics."""
    modes: tuple[Mode, ...]
    pencil_order_p: int
    pencil_L: int
    rank_error_E_p: float
    reconstruction_errors: np.ndarray
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    degenerate_streams: tuple[int, ...] = ()
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "reconstruction_errors",
                           _frozen_array(self.reconstruction_errors))
        object.__setattr__(self, "singular_values", _frozen_array(self.singular_values))
        object.__setattr__(self, "degenerate_streams", tuple(self.degenerate_streams))
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def n_streams(self) -> int:
        return int(self.reconstruction_errors.shape[0])

    @property
    def max_reconstruction_error(self) -> float:
        if self.n_streams == 0:
            return 0.0
        return float(np.max(self.reconstruction_errors))


# ---------------------------------------------------------------------------
# Features and datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureVector:
    """The ordered d-dimensional feature vector of one event."""
    event_id: str
    label: int
    values: np.ndarray
    names: tuple[str, ...]
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        values = _frozen_array(self.values)
        names = tuple(self.names)
        if values.ndim != 1 or values.shape[0] != len(names):
            raise InputError(
                f"event {self.event_id}: {values.shape[0]} values for {len(names)} names"
            )
        if len(set(names)) != len(names):
            raise InputError(f"event {self.event_id}: duplicate feature names")
        if not np.all(np.isfinite(values)):
            raise InputError(f"event {self.event_id}: non-finite feature value")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def dimension(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Dataset:
    """Labelled feature rows sharing one feature-name index."""
    rows: tuple[FeatureVector, ...]
    feature_names: tuple[str, ...]

    def __post_init__(self):
        rows = tuple(self.rows)
        names = tuple(self.feature_names)
        for row in rows:
            if row.names != names:
                column = first_difference(row.names, names)
                raise SchemaMismatchError(
                    f"event {row.event_id} does not share the dataset schema "
                    f"(column {column!r})",
                    column=column,
                )
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_rows(cls, rows: Sequence[FeatureVector]) -> Dataset:
        if not rows:
            raise InputError("cannot build a dataset from zero rows")
        return cls(rows=tuple(rows), feature_names=rows[0].names)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, labels: Sequence[int],
                    feature_names: Sequence[str],
                    event_ids: Sequence[str] | None = None) -> Dataset:
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix.reshape(-1, 1)
        names = tuple(feature_names)
        if event_ids is None:
            event_ids = [f"row{i:05d}" for i in range(matrix.shape[0])]
        rows = tuple(
            FeatureVector(event_id=str(eid), label=int(lbl), values=vals, names=names)
            for eid, lbl, vals in zip(event_ids, labels, matrix)
        )
        return cls(rows=rows, feature_names=names)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def dimension(self) -> int:
        return len(self.feature_names)

    @property
    def matrix(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.dimension))
        return np.vstack([row.values for row in self.rows])

    @property
    def labels(self) -> np.ndarray:
        return np.array([row.label for row in self.rows], dtype=int)

    @property
    def event_ids(self) -> tuple[str, ...]:
        return tuple(row.event_id for row in self.rows)

    def take(self, indices: Sequence[int]) -> Dataset:
        """Rows at the given positions (repeats allowed, as in a bootstrap)."""
        return Dataset(rows=tuple(self.rows[int(i)] for i in indices),
                       feature_names=self.feature_names)

    def select_features(self, indices: Sequence[int]) -> Dataset:
        """Same rows restricted to the given feature columns, in the given order."""
        idx = [int(i) for i in indices]
        names = tuple(self.feature_names[i] for i in idx)
        rows = tuple(
            FeatureVector(event_id=row.event_id, label=row.label,
                          values=row.values[idx], names=names, flags=row.flags)
            for row in self.rows
        )
        return Dataset(rows=rows, feature_names=names)

    def with_matrix(self, matrix: np.ndarray) -> Dataset:
        """Same rows and schema with replaced feature values."""
        rows = tuple(
            FeatureVector(event_id=row.event_id, label=row.label, values=vals,
                          names=self.feature_names, flags=row.flags)
            for row, vals in zip(self.rows, np.asarray(matrix, dtype=float))
        )
        return Dataset(rows=rows, feature_names=self.feature_names)

    def channel_subset(self, channels: Iterable[ChannelKind]) -> Dataset:
        """Keep only the features whose name starts with one of the channels."""
        prefixes = tuple(f"{c.value}." for c in canonical_channels(channels))
        keep = [i for i, name in enumerate(self.feature_names) if name.startswith(prefixes)]
        if not keep:
            raise InputError("channel subset selects no features")
        return self.select_features(keep)


def first_difference(a: Sequence[str], b: Sequence[str]) -> str | None:
    for x, y in zip(a, b):
        if x != y:
            return x
    if len(a) > len(b):
        return a[len(b)]
    if len(b) > len(a):
        return b[len(a)]
    return None
