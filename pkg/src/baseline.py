"""
Subspace-angle event identifier used as the comparison baseline.

An event is summarised by the span of the dominant r right singular vectors
of its (streams x samples) VPM matrix. A test event takes the label of the
dictionary entry whose span is nearest in (mean or max) principal angle.

Depends on: core.py, preprocess.py, learn.py (shared stratified folds)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from core import ChannelKind, EventRecord, InputError
from learn import ConfusionMatrix, stratified_folds
from preprocess import detrend_matrix

logger = logging.getLogger(__name__)


DEFAULT_RANK = 5
DEFAULT_WINDOW = 300
AGGREGATES = ("mean", "max")
ORTHONORMAL_TOL = 1e-9
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SubspaceDictionary:
    """Labelled orthonormal N x r bases of the training events.

    detrend records whether the bases were taken from detrended windows; raw
    test matrices handed to classify_by_dictionary get the same treatment.
    """
    entries: tuple[tuple[int, np.ndarray], ...]
    r: int = DEFAULT_RANK
    window_N: int = DEFAULT_WINDOW
    aggregate: str = "mean"
    detrend: bool = False

    def __post_init__(self):
        if not self.entries:
            raise InputError("subspace dictionary needs at least one entry")
        if self.aggregate not in AGGREGATES:
            raise InputError(f"aggregate must be one of {AGGREGATES}, got {self.aggregate!r}")
        eye = np.eye(self.r)
        frozen = []
        for label, basis in self.entries:
            basis = np.array(basis, dtype=float)
            if basis.shape != (self.window_N, self.r):
                raise InputError(f"basis shape {basis.shape} != ({self.window_N}, {self.r})")
            if np.max(np.abs(basis.T @ basis - eye)) > ORTHONORMAL_TOL:
                raise InputError("dictionary bases must have orthonormal columns")
            basis.setflags(write=False)
            frozen.append((int(label), basis))
        object.__setattr__(self, "entries", tuple(frozen))

    def __len__(self) -> int:
        return len(self.entries)


def event_subspace(data, r: int = DEFAULT_RANK) -> np.ndarray:
    """N x r orthonormal basis of the dominant right singular vectors.

    A matrix of rank below r is padded with an orthonormal complement of
    its row space (logged as a warning).
    """
    A = np.atleast_2d(np.asarray(data, dtype=float))
    m, n = A.shape
    if not 1 <= r <= min(m, n):
        raise InputError(f"r={r} must lie in [1, min(m, N)={min(m, n)}]")

    _, s, vt = scipy.linalg.svd(A, full_matrices=False)
    rank = int(np.count_nonzero(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
    if rank >= r:
        return vt[:r].T
    logger.warning("event_subspace: rank %d below r=%d, padding with a complement", rank, r)
    if rank == 0:
        return np.eye(n)[:, :r]
    complement = scipy.linalg.null_space(vt[:rank])
    return np.hstack([vt[:rank].T, complement[:, : r - rank]])


def subspace_distance(A, B, aggregate: str = "mean") -> float:
    """Mean (or max) principal angle between the spans of A and B, radians."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != B.shape[0]:
        raise InputError(f"ambient dimensions differ: {A.shape[0]} vs {B.shape[0]}")
    angles = scipy.linalg.subspace_angles(A, B)
    if aggregate == "mean":
        return float(np.mean(angles))
    if aggregate == "max":
        return float(np.max(angles))
    raise InputError(f"aggregate must be one of {AGGREGATES}, got {aggregate!r}")


def event_basis(record: EventRecord, r: int = DEFAULT_RANK, window_N: int = DEFAULT_WINDOW,
                channel: ChannelKind = ChannelKind.VPM, detrend: bool = True) -> np.ndarray:
    """Basis of the first window_N samples of one channel of an event."""
    if channel not in record.channels:
        raise InputError(f"event {record.event_id} has no {channel.value} channel")
    if record.n_samples < window_N:
        raise InputError(
            f"event {record.event_id} has {record.n_samples} samples, window needs {window_N}"
        )
    data = record.channels[channel][:, :window_N]
    if detrend:
        data = detrend_matrix(data)
    return event_subspace(data, r)


def build_dictionary(records: Sequence[EventRecord], r: int = DEFAULT_RANK,
                     window_N: int = DEFAULT_WINDOW, aggregate: str = "mean",
                     channel: ChannelKind = ChannelKind.VPM,
                     detrend: bool = True) -> SubspaceDictionary:
    return SubspaceDictionary(
        entries=tuple((rec.label, event_basis(rec, r, window_N, channel, detrend))
                      for rec in records),
        r=r,
        window_N=window_N,
        aggregate=aggregate,
        detrend=detrend,
    )


def classify_by_dictionary(test_event, dictionary: SubspaceDictionary) -> tuple[int, float]:
    """Label of the nearest dictionary entry and its distance (ties: first entry).

    test_event is either an m x N matrix or an N x r basis already.
    """
    data = np.atleast_2d(np.asarray(test_event, dtype=float))
    if data.shape == (dictionary.window_N, dictionary.r):
        basis = data
    else:
        if data.shape[1] != dictionary.window_N:
            raise InputError(
                f"test event has {data.shape[1]} samples, dictionary windows are "
                f"{dictionary.window_N}"
            )
        if dictionary.detrend:
            data = detrend_matrix(data)
        basis = event_subspace(data, dictionary.r)
    distances = [subspace_distance(basis, entry, dictionary.aggregate)
                 for _, entry in dictionary.entries]
    best = int(np.argmin(distances))
    return dictionary.entries[best][0], float(distances[best])


def baseline_kfold_confusion(records: Sequence[EventRecord], folds: int = 5, seed: int = 0,
                             r: int = DEFAULT_RANK, window_N: int = DEFAULT_WINDOW,
                             aggregate: str = "mean",
                             channel: ChannelKind = ChannelKind.VPM) -> ConfusionMatrix:
    """Pooled out-of-fold confusion of the 1-NN subspace classifier.

    Events are ordered by event_id, so the folds match kfold_confusion on a
    dataset built from the same corpus with the same seed.
    """
    ordered = sorted(records, key=lambda rec: rec.event_id)
    labels = np.array([rec.label for rec in ordered], dtype=int)
    bases = [event_basis(rec, r, window_N, channel) for rec in ordered]
    assignment = stratified_folds(labels, folds, seed)

    predictions = np.empty(labels.size, dtype=int)
    for fold in range(folds):
        train = np.flatnonzero(assignment != fold)
        dictionary = SubspaceDictionary(
            entries=tuple((labels[i], bases[i]) for i in train),
            r=r, window_N=window_N, aggregate=aggregate, detrend=True,
        )
        for i in np.flatnonzero(assignment == fold):
            predictions[i], _ = classify_by_dictionary(bases[i], dictionary)
    return ConfusionMatrix.from_predictions(labels, predictions)
