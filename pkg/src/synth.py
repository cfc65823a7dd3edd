"""
Synthetic labelled ringdown events.

Stand-in for dynamic-simulation output: every event is a sum of damped
sinusoidal modes shared by all streams and channels, with per-stream complex
residues whose magnitudes fall off with distance from the disturbance, an
affine drift of the operating point, and white measurement noise at a drawn
SNR. Two default class templates differ in the band and damping of their
dominant mode and in how widely the oscillation spreads across PMUs; their
secondary modes overlap so the problem is not trivially separable.

Depends on: core.py, preprocess.py
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from core import (
    ChannelKind,
    DEFAULT_SAMPLE_RATE_HZ,
    EventRecord,
    GENERATION_LOSS,
    InputError,
    LINE_TRIP,
)
from preprocess import detrend_matrix


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

TWO_PI = 2.0 * math.pi

DEFAULT_CHANNELS = (ChannelKind.VPM, ChannelKind.VPA, ChannelKind.F)
DEFAULT_STREAMS = 95
DEFAULT_SAMPLES = 300
LOADING_LEVELS = (1.0, 0.8)       # normal and reduced loading
PRE_EVENT_SECONDS = 1.0

# Channel -> (operating point, oscillation scale)
CHANNEL_PROFILE = {
    ChannelKind.VPM: (1.0, 0.01),
    ChannelKind.VPA: (0.2, 0.02),
    ChannelKind.IPM: (0.8, 0.05),
    ChannelKind.IPA: (-0.3, 0.03),
    ChannelKind.F: (60.0, 0.02),
}


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassTemplate:
    """Distribution of events of one class.

    Each entry of sigma_ranges / omega_ranges / mode_weights describes one
    conjugate mode pair (two poles). spatial_decay is the range of the
    exponential fall-off rate of residue magnitude across ranked streams.
    trend_slope_range is per sample, in units of the channel scale.
    """
    name: str
    label: int
    sigma_ranges: tuple[tuple[float, float], ...]
    omega_ranges: tuple[tuple[float, float], ...]
    mode_weights: tuple[float, ...]
    spatial_decay: tuple[float, float] = (1.0, 2.0)
    trend_slope_range: tuple[float, float] = (-2e-3, 2e-3)
    snr_db_range: tuple[float, float] = (40.0, 60.0)

    def __post_init__(self):
        n = len(self.omega_ranges)
        if n == 0 or len(self.sigma_ranges) != n or len(self.mode_weights) != n:
            raise InputError(f"template {self.name}: mode ranges and weights differ in length")
        for lo, hi in self.sigma_ranges:
            if lo > hi or hi > 0:
                raise InputError(f"template {self.name}: sigma range ({lo}, {hi}) must be <= 0")
        for lo, hi in self.omega_ranges:
            if lo > hi or lo <= 0:
                raise InputError(f"template {self.name}: omega range ({lo}, {hi}) must be > 0")
        if any(w <= 0 for w in self.mode_weights):
            raise InputError(f"template {self.name}: mode weights must be positive")
        if self.snr_db_range[0] > self.snr_db_range[1]:
            raise InputError(f"template {self.name}: inverted SNR range")

    @property
    def n_pairs(self) -> int:
        return len(self.omega_ranges)

    @property
    def planted_order(self) -> int:
        return 2 * self.n_pairs

    def truncated(self, n_pairs: int) -> ClassTemplate:
        """Template keeping only the first n_pairs mode pairs."""
        if not 1 <= n_pairs <= self.n_pairs:
            raise InputError(f"template {self.name} has {self.n_pairs} mode pairs")
        return replace(
            self,
            sigma_ranges=self.sigma_ranges[:n_pairs],
            omega_ranges=self.omega_ranges[:n_pairs],
            mode_weights=self.mode_weights[:n_pairs],
        )

    def with_snr(self, snr_db: float) -> ClassTemplate:
        return replace(self, snr_db_range=(snr_db, snr_db))


def _band(lo_hz: float, hi_hz: float) -> tuple[float, float]:
    return (TWO_PI * lo_hz, TWO_PI * hi_hz)


# Local-mode dominated, sharply localized around the tripped line.
LINE_TRIP_TEMPLATE = ClassTemplate(
    name="line_trip",
    label=LINE_TRIP,
    sigma_ranges=((-0.45, -0.20), (-0.50, -0.15), (-0.60, -0.20)),
    omega_ranges=(_band(0.95, 1.40), _band(1.60, 2.00), _band(0.70, 0.85)),
    mode_weights=(1.0, 0.55, 0.35),
    spatial_decay=(3.0, 5.0),
)

# Inter-area dominated, lightly damped and seen across the whole grid.
GENERATION_LOSS_TEMPLATE = ClassTemplate(
    name="generation_loss",
    label=GENERATION_LOSS,
    sigma_ranges=((-0.25, -0.08), (-0.50, -0.15), (-0.60, -0.20)),
    omega_ranges=(_band(0.30, 0.60), _band(1.60, 2.00), _band(0.70, 0.85)),
    mode_weights=(1.0, 0.55, 0.35),
    spatial_decay=(0.5, 1.5),
)

DEFAULT_TEMPLATES = (LINE_TRIP_TEMPLATE, GENERATION_LOSS_TEMPLATE)
TEMPLATES_BY_NAME = {t.name: t for t in DEFAULT_TEMPLATES}


# ---------------------------------------------------------------------------
# Event generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticEvent:
    """A generated record plus the parameters planted in it."""
    record: EventRecord
    sigmas: np.ndarray
    omegas: np.ndarray
    snr_db: float
    loading: float
    onset: int


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def simulate_event(template: ClassTemplate, n_streams: int = DEFAULT_STREAMS,
                   n_samples: int = DEFAULT_SAMPLES,
                   sample_period: float = 1.0 / DEFAULT_SAMPLE_RATE_HZ,
                   channels: Sequence[ChannelKind] = DEFAULT_CHANNELS,
                   seed=0, event_id: str | None = None, snr_db: float | None = None,
                   with_trend: bool = True, include_pre_event: bool = False,
                   pre_event_seconds: float = PRE_EVENT_SECONDS) -> SyntheticEvent:
    """Generate one event and report the planted modes alongside it."""
    if n_streams < 1 or n_samples < 4:
        raise InputError(f"need m >= 1 and N >= 4, got m={n_streams}, N={n_samples}")
    if not channels:
        raise InputError("need at least one channel")
    nyquist = math.pi / sample_period
    if max(hi for _, hi in template.omega_ranges) >= nyquist:
        raise InputError(f"template {template.name} has modes above {nyquist:.3f} rad/s")

    rng = np.random.default_rng(seed)
    sigmas = np.array([_uniform(rng, r) for r in template.sigma_ranges])
    omegas = np.array([_uniform(rng, r) for r in template.omega_ranges])
    weights = np.asarray(template.mode_weights, dtype=float)
    loading = float(rng.choice(LOADING_LEVELS))
    decay = _uniform(rng, template.spatial_decay)
    if snr_db is None:
        snr_db = _uniform(rng, template.snr_db_range)
    # distance rank of each stream from the disturbance
    ranks = rng.permutation(n_streams) / n_streams
    spatial = np.exp(-decay * ranks)

    n_pre = int(round(pre_event_seconds / sample_period)) if include_pre_event else 0
    t = np.arange(n_samples) * sample_period
    envelopes = np.exp(np.outer(sigmas, t))                     # pairs x N
    n_total = n_pre + n_samples

    data = {}
    for kind in sorted(set(channels)):
        offset, scale = CHANNEL_PROFILE[kind]
        mags = (scale * loading * weights[:, None] * spatial[None, :]
                * rng.uniform(0.8, 1.2, size=(weights.size, n_streams)))
        phases = rng.uniform(-math.pi, math.pi, size=(weights.size, n_streams))

        # each pair contributes 2|R| e^{sigma t} cos(omega t + theta)
        clean = np.zeros((n_streams, n_samples))
        for k in range(weights.size):
            osc = envelopes[k] * np.cos(np.outer(phases[k], np.ones(n_samples))
                                        + omegas[k] * t)
            clean += 2.0 * mags[k][:, None] * osc

        stream = np.zeros((n_streams, n_total))
        stream[:, n_pre:] = clean

        if math.isfinite(snr_db):
            rms = np.sqrt(np.mean(detrend_matrix(clean) ** 2, axis=1))
            noise_std = rms * 10.0 ** (-snr_db / 20.0)
            stream += noise_std[:, None] * rng.standard_normal((n_streams, n_total))

        if with_trend:
            slopes = scale * rng.uniform(*template.trend_slope_range, size=n_streams)
            n = np.arange(n_total) - n_pre
            stream += offset + slopes[:, None] * n[None, :]

        data[kind] = stream

    record = EventRecord(
        event_id=event_id or f"{template.name}-event",
        label=template.label,
        channels=data,
        sample_rate_hz=1.0 / sample_period,
    )
    return SyntheticEvent(record=record, sigmas=sigmas, omegas=omegas,
                          snr_db=float(snr_db), loading=loading, onset=n_pre)


def generate_event(template: ClassTemplate, n_streams: int = DEFAULT_STREAMS,
                   n_samples: int = DEFAULT_SAMPLES,
                   sample_period: float = 1.0 / DEFAULT_SAMPLE_RATE_HZ,
                   channels: Sequence[ChannelKind] = DEFAULT_CHANNELS,
                   seed=0, **kwargs) -> EventRecord:
    """One labelled EventRecord drawn from the template (see simulate_event)."""
    return simulate_event(template, n_streams, n_samples, sample_period,
                          channels, seed, **kwargs).record


def simulate_corpus(templates: Sequence[ClassTemplate], counts: Sequence[int],
                    seed: int = 0, **kwargs) -> list[SyntheticEvent]:
    """counts[j] events of templates[j]; each event gets its own child seed."""
    if len(templates) != len(counts):
        raise InputError(f"{len(templates)} templates but {len(counts)} counts")
    if any(c < 0 for c in counts) or sum(counts) < 1:
        raise InputError(f"counts must be non-negative with a positive total, got {list(counts)}")

    children = np.random.SeedSequence(seed).spawn(sum(counts))
    events = []
    child = iter(children)
    for template, count in zip(templates, counts):
        for j in range(count):
            events.append(simulate_event(template, seed=next(child),
                                         event_id=f"{template.name}-{j:04d}", **kwargs))
    return events


def generate_corpus(templates: Sequence[ClassTemplate], counts: Sequence[int],
                    seed: int = 0, **kwargs) -> list[EventRecord]:
    """Reproducible labelled corpus with exact per-class counts."""
    return [event.record for event in simulate_corpus(templates, counts, seed, **kwargs)]
