"""
Detrending of PMU measurement streams.

Each stream has its linear least-squares fit against the sample index
removed before any modal analysis, so that the identified modes describe
the post-contingency oscillation rather than the slow drift of the
operating point.

Depends on: core.py
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from core import EventRecord, InputError


@dataclass(frozen=True)
class DetrendFit:
    """Linear fit w0 + w1*n removed from one stream (n = sample index)."""
    intercept_w0: float
    slope_w1: float

    def trend(self, n_samples: int) -> np.ndarray:
        return self.intercept_w0 + self.slope_w1 * np.arange(n_samples, dtype=float)


def detrend_stream(samples) -> tuple[np.ndarray, DetrendFit]:
    """Remove the least-squares line through (n, samples[n]).

    Solves the 2x2 normal equations in closed form (centred on the mean
    index, which keeps the solve well conditioned for long windows).
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim != 1:
        raise InputError(f"expected a 1-D stream, got shape {y.shape}")
    n_samples = y.shape[0]
    if n_samples < 2:
        raise InputError(f"detrending needs at least 2 samples, got {n_samples}")
    if not np.all(np.isfinite(y)):
        raise InputError("detrending needs finite samples")

    n = np.arange(n_samples, dtype=float)
    n_mean = n.mean()
    y_mean = y.mean()
    dn = n - n_mean
    slope = float(np.dot(dn, y - y_mean) / np.dot(dn, dn))
    intercept = float(y_mean - slope * n_mean)

    detrended = y - (intercept + slope * n)
    return detrended, DetrendFit(intercept_w0=intercept, slope_w1=slope)


def detrend_matrix(streams) -> np.ndarray:
    """Detrend every row of an (m x N) stream matrix independently."""
    data = np.atleast_2d(np.asarray(streams, dtype=float))
    return np.vstack([detrend_stream(row)[0] for row in data])


def detrend_event(record: EventRecord) -> EventRecord:
    """Detrend every stream of every channel; id, label and rate are preserved."""
    return record.with_channels({
        kind: detrend_matrix(data) for kind, data in record.channels.items()
    })


def event_window(record: EventRecord, start: int, n_samples: int) -> EventRecord:
    """The n_samples block beginning at sample `start` (e.g. the event onset)."""
    if start < 0 or n_samples < 1 or start + n_samples > record.n_samples:
        raise InputError(
            f"window [{start}, {start + n_samples}) outside record of "
            f"{record.n_samples} samples"
        )
    return record.with_channels({
        kind: data[:, start:start + n_samples] for kind, data in record.channels.items()
    })
