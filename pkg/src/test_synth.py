"""
Synthetic event generator: shapes, reproducibility and planted content.

Usage:
    cd src
    pytest test_synth.py
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from core import ChannelKind, InputError, validate_event
from preprocess import detrend_matrix
from synth import (
    CHANNEL_PROFILE,
    DEFAULT_TEMPLATES,
    GENERATION_LOSS_TEMPLATE,
    LINE_TRIP_TEMPLATE,
    LOADING_LEVELS,
    TEMPLATES_BY_NAME,
    ClassTemplate,
    generate_corpus,
    generate_event,
    simulate_corpus,
    simulate_event,
)


# ---------------------------------------------------------------------------
# Single events
# ---------------------------------------------------------------------------

def test_default_event_shape():
    record = generate_event(LINE_TRIP_TEMPLATE, seed=0)
    assert record.label == 0
    assert record.sample_rate_hz == 30.0
    assert record.channel_kinds == (ChannelKind.VPM, ChannelKind.VPA, ChannelKind.F)
    for data in record.channels.values():
        assert data.shape == (95, 300)
    assert validate_event(record) == []


def test_same_seed_same_event():
    a = generate_event(GENERATION_LOSS_TEMPLATE, n_streams=6, seed=42)
    b = generate_event(GENERATION_LOSS_TEMPLATE, n_streams=6, seed=42)
    c = generate_event(GENERATION_LOSS_TEMPLATE, n_streams=6, seed=43)
    for kind in a.channels:
        np.testing.assert_array_equal(a.channels[kind], b.channels[kind])
        assert not np.array_equal(a.channels[kind], c.channels[kind])


def test_planted_parameters_fall_in_template_ranges():
    for template in DEFAULT_TEMPLATES:
        for seed in range(10):
            event = simulate_event(template, n_streams=3, n_samples=50, seed=seed)
            for value, (lo, hi) in zip(event.sigmas, template.sigma_ranges):
                assert lo <= value <= hi
            for value, (lo, hi) in zip(event.omegas, template.omega_ranges):
                assert lo <= value <= hi
            assert event.loading in LOADING_LEVELS
            lo, hi = template.snr_db_range
            assert lo <= event.snr_db <= hi


def test_noise_free_event_is_a_sum_of_ringdowns():
    event = simulate_event(LINE_TRIP_TEMPLATE.truncated(1), n_streams=4, n_samples=200,
                           channels=(ChannelKind.VPM,), seed=5, snr_db=math.inf,
                           with_trend=False)
    data = event.record.channels[ChannelKind.VPM]
    t = np.arange(200) / 30.0
    sigma, omega = event.sigmas[0], event.omegas[0]
    # every stream is A e^{sigma t} cos(omega t + phase): fit A cos, A sin by least squares
    basis = np.column_stack([np.exp(sigma * t) * np.cos(omega * t),
                             np.exp(sigma * t) * np.sin(omega * t)])
    coef, *_ = np.linalg.lstsq(basis, data.T, rcond=None)
    np.testing.assert_allclose(basis @ coef, data.T, atol=1e-12)


def test_trend_rides_on_the_operating_point():
    record = generate_event(LINE_TRIP_TEMPLATE, n_streams=5, seed=2)
    offset, _ = CHANNEL_PROFILE[ChannelKind.F]
    assert abs(record.channels[ChannelKind.F].mean() - offset) < 1.0


def test_requested_snr_is_realised():
    kw = dict(n_streams=40, channels=(ChannelKind.VPM,), seed=9, with_trend=False)
    clean = generate_event(LINE_TRIP_TEMPLATE, snr_db=math.inf, **kw).channels[ChannelKind.VPM]
    noisy = generate_event(LINE_TRIP_TEMPLATE, snr_db=20.0, **kw).channels[ChannelKind.VPM]
    signal_rms = np.sqrt(np.mean(detrend_matrix(clean) ** 2, axis=1))
    noise_rms = np.sqrt(np.mean((noisy - clean) ** 2, axis=1))
    assert np.mean(noise_rms / signal_rms) == pytest.approx(0.1, rel=0.05)


def test_pre_event_segment():
    event = simulate_event(GENERATION_LOSS_TEMPLATE, n_streams=3, n_samples=90,
                           channels=(ChannelKind.VPA,), seed=1, snr_db=math.inf,
                           with_trend=False, include_pre_event=True)
    data = event.record.channels[ChannelKind.VPA]
    assert event.onset == 30
    assert data.shape == (3, 120)
    np.testing.assert_array_equal(data[:, :30], 0.0)
    assert np.all(np.abs(data[:, 30:]).max(axis=1) > 0)


def test_modes_above_nyquist_rejected():
    with pytest.raises(InputError):
        generate_event(LINE_TRIP_TEMPLATE, n_streams=2, sample_period=1.0)


def test_bad_sizes_rejected():
    with pytest.raises(InputError):
        generate_event(LINE_TRIP_TEMPLATE, n_streams=0)
    with pytest.raises(InputError):
        generate_event(LINE_TRIP_TEMPLATE, n_samples=3)
    with pytest.raises(InputError):
        generate_event(LINE_TRIP_TEMPLATE, channels=())


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

def test_template_lookup_and_order():
    assert TEMPLATES_BY_NAME["line_trip"] is LINE_TRIP_TEMPLATE
    assert GENERATION_LOSS_TEMPLATE.label == 1
    assert LINE_TRIP_TEMPLATE.planted_order == 6


def test_template_variants():
    short = LINE_TRIP_TEMPLATE.truncated(2)
    assert short.n_pairs == 2
    assert short.omega_ranges == LINE_TRIP_TEMPLATE.omega_ranges[:2]
    assert LINE_TRIP_TEMPLATE.with_snr(35.0).snr_db_range == (35.0, 35.0)
    with pytest.raises(InputError):
        LINE_TRIP_TEMPLATE.truncated(4)


def test_template_validation():
    with pytest.raises(InputError):
        ClassTemplate("bad", 0, ((0.1, 0.2),), ((1.0, 2.0),), (1.0,))
    with pytest.raises(InputError):
        ClassTemplate("bad", 0, ((-0.2, -0.1),), ((0.0, 2.0),), (1.0,))
    with pytest.raises(InputError):
        ClassTemplate("bad", 0, ((-0.2, -0.1),), ((1.0, 2.0),), (1.0, 2.0))


def test_dominant_bands_are_disjoint():
    lt_lo, _ = LINE_TRIP_TEMPLATE.omega_ranges[0]
    _, gl_hi = GENERATION_LOSS_TEMPLATE.omega_ranges[0]
    assert lt_lo - gl_hi >= 0.5


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------

def test_corpus_counts_and_ids():
    records = generate_corpus(DEFAULT_TEMPLATES, (400, 400), seed=0, n_streams=1,
                              n_samples=8, channels=(ChannelKind.F,))
    assert len(records) == 800
    assert np.bincount([r.label for r in records]).tolist() == [400, 400]
    assert records[0].event_id == "line_trip-0000"
    assert records[-1].event_id == "generation_loss-0399"
    assert len({r.event_id for r in records}) == 800


def test_corpus_allows_an_empty_class():
    records = generate_corpus(DEFAULT_TEMPLATES, (1, 0), n_streams=2, n_samples=10)
    assert [r.label for r in records] == [0]


def test_corpus_reproducible():
    kw = dict(n_streams=3, n_samples=40)
    a = simulate_corpus(DEFAULT_TEMPLATES, (2, 2), seed=5, **kw)
    b = simulate_corpus(DEFAULT_TEMPLATES, (2, 2), seed=5, **kw)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.omegas, y.omegas)
        np.testing.assert_array_equal(x.record.channels[ChannelKind.VPM],
                                      y.record.channels[ChannelKind.VPM])


def test_corpus_rejects_bad_counts():
    with pytest.raises(InputError):
        generate_corpus(DEFAULT_TEMPLATES, (1,))
    with pytest.raises(InputError):
        generate_corpus(DEFAULT_TEMPLATES, (0, 0))
    with pytest.raises(InputError):
        generate_corpus(DEFAULT_TEMPLATES, (-1, 3))
