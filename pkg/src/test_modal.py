"""
Multi-signal Matrix Pencil: Hankel stacks, truncation, poles, residues,
end-to-end decomposition and model-order selection.

Usage:
    cd src
    pytest test_modal.py            # fast checks
    pytest test_modal.py -m slow    # 100-event recovery runs
"""

from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from core import ChannelKind, EventRecord, InputError, UnderdeterminedSignalError
from modal import (
    PencilConfig,
    decompose_channel,
    decompose_event,
    error_curve,
    error_envelope,
    hankel_single,
    hankel_stacked,
    model_order_report,
    pair_conjugates,
    pencil_diagnostics,
    pencil_eigenvalues,
    rank_p_truncate,
    reconstruct,
    reconstruction_errors,
    select_model_order,
    solve_residues,
)
from synth import GENERATION_LOSS_TEMPLATE, LINE_TRIP_TEMPLATE, simulate_event

TS = 1.0 / 30.0


def _clean_event(template=LINE_TRIP_TEMPLATE, seed=0, n_streams=20, n_samples=300, **kw):
    kw.setdefault("snr_db", math.inf)
    return simulate_event(template, n_streams=n_streams, n_samples=n_samples,
                          channels=(ChannelKind.VPM,), seed=seed, with_trend=False, **kw)


def _streams(event) -> np.ndarray:
    return event.record.channels[ChannelKind.VPM]


# ---------------------------------------------------------------------------
# Hankel matrices
# ---------------------------------------------------------------------------

def test_hankel_single_indexing():
    np.testing.assert_array_equal(hankel_single([0, 1, 2, 3], 2), [[0, 1, 2], [1, 2, 3]])


def test_hankel_single_rejects_short_stream():
    with pytest.raises(InputError):
        hankel_single([7.0], 1)


def test_hankel_shapes_at_full_scale():
    assert hankel_single(np.zeros(300), 150).shape == (150, 151)
    assert hankel_stacked(np.zeros((95, 300)), 150).shape == (14250, 151)


def test_stacked_blocks():
    y = np.arange(10.0)
    np.testing.assert_array_equal(hankel_stacked([y], 4), hankel_single(y, 4))
    H = hankel_stacked([y, y], 4)
    np.testing.assert_array_equal(H[:6], H[6:])


def test_ragged_streams_rejected():
    with pytest.raises(InputError):
        hankel_stacked([np.zeros(10), np.zeros(9)], 4)


# ---------------------------------------------------------------------------
# Rank-p truncation
# ---------------------------------------------------------------------------

def test_exact_low_rank_and_full_rank():
    rng = np.random.default_rng(1)
    H = rng.normal(size=(12, 2)) @ rng.normal(size=(2, 9))
    assert rank_p_truncate(H, 2).error <= 1e-12
    assert rank_p_truncate(rng.normal(size=(6, 5)), 5).error == pytest.approx(0.0, abs=1e-12)


def test_zero_matrix_is_degenerate():
    trunc = rank_p_truncate(np.zeros((5, 4)), 2)
    assert trunc.degenerate and trunc.error == 0.0
    np.testing.assert_array_equal(trunc.h_p, 0.0)


def test_six_mode_stack_has_rank_six():
    H = hankel_stacked(_streams(_clean_event()), 150)
    assert rank_p_truncate(H, 6).error <= 1e-10
    assert rank_p_truncate(H, 5).error > 1e-3


def test_error_curve_is_non_increasing():
    s = np.array([5.0, 3.0, 1.0, 0.5, 0.0])
    curve = error_curve(s)
    assert np.all(np.diff(curve) <= 0)
    assert curve[-1] == 0.0
    assert curve[0] == pytest.approx(math.sqrt((9 + 1 + 0.25) / (25 + 9 + 1 + 0.25)))


# ---------------------------------------------------------------------------
# Poles and residues
# ---------------------------------------------------------------------------

def test_dc_signal_gives_unit_pole():
    z = pencil_eigenvalues(hankel_single(np.full(20, 3.0), 10), 1)
    assert z.shape == (1,)
    assert abs(z[0] - 1.0) < 1e-10


def test_too_few_nonzero_eigenvalues_reported():
    with pytest.raises(UnderdeterminedSignalError) as info:
        pencil_eigenvalues(hankel_single(np.full(20, 3.0), 10), 3)
    assert info.value.found == 1


def test_single_mode_residue():
    z = np.array([0.9 + 0j])
    y = 2.0 * z[0].real ** np.arange(40)
    R = solve_residues(y[None, :], z)
    assert abs(R[0, 0] - 2.0) < 1e-9


def test_cosine_splits_into_conjugate_residues():
    omega, amp = 0.4, 3.0
    z = np.exp(np.array([1j, -1j]) * omega)
    y = amp * np.cos(omega * np.arange(60))
    R = solve_residues(y[None, :], z)
    np.testing.assert_allclose(np.abs(R[0]), [amp / 2, amp / 2], rtol=1e-9)
    assert abs(R[0, 0] - np.conj(R[0, 1])) < 1e-9


def test_zero_stream_has_zero_residues():
    R = solve_residues(np.zeros((1, 30)), np.exp(np.array([0.3j, -0.3j])))
    np.testing.assert_allclose(np.abs(R), 0.0, atol=1e-14)


def test_duplicate_poles_rejected():
    with pytest.raises(InputError):
        solve_residues(np.ones((1, 10)), [0.5, 0.5])


def test_reconstruction_round_trip():
    streams = _streams(_clean_event(seed=3))
    z = pencil_eigenvalues(rank_p_truncate(hankel_stacked(streams, 150), 6).h_p, 6)
    R = solve_residues(streams, z)
    y_hat = reconstruct(z, R, streams.shape[1])
    assert np.linalg.norm(y_hat - streams) <= 1e-8 * np.linalg.norm(streams)


def test_reconstruct_trivial_cases():
    np.testing.assert_array_equal(reconstruct([0.5, 0.7], np.zeros((2, 2)), 5), 0.0)
    np.testing.assert_allclose(reconstruct([1.0], [[4.0]], 6), 4.0)


def test_reconstruction_errors():
    y = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [1.0, -1.0, 1.0]])
    errors, degenerate = reconstruction_errors(y, np.vstack([y[0], y[1], np.zeros(3)]))
    np.testing.assert_allclose(errors, [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(degenerate, [False, True, False])


def test_pair_conjugates():
    z = np.array([0.9 * np.exp(-0.2j), 0.5, 0.9 * np.exp(0.2j)])
    assert pair_conjugates(z) == [(2, 0), (1, None)]


# ---------------------------------------------------------------------------
# decompose_channel
# ---------------------------------------------------------------------------

def _assert_recovers(event, dec, rtol):
    omegas = np.sort([m.angular_freq_omega for m in dec.modes])
    order = np.argsort(event.omegas)
    np.testing.assert_allclose(omegas, event.omegas[order], rtol=rtol)
    sigma_by_omega = [m.damping_sigma for m in sorted(dec.modes, key=lambda m: m.angular_freq_omega)]
    np.testing.assert_allclose(sigma_by_omega, event.sigmas[order], rtol=rtol)


@pytest.mark.parametrize("template", [LINE_TRIP_TEMPLATE, GENERATION_LOSS_TEMPLATE])
def test_noise_free_recovery(template):
    event = _clean_event(template, seed=5)
    dec = decompose_channel(_streams(event), PencilConfig(order_p=6), TS)
    assert len(dec.modes) == 3 and all(m.conjugate for m in dec.modes)
    _assert_recovers(event, dec, 1e-6)
    assert dec.rank_error_E_p <= 1e-8
    assert dec.max_reconstruction_error <= 1e-8
    assert dec.flags == ()


def test_modes_ranked_by_average_residue():
    dec = decompose_channel(_streams(_clean_event(seed=8)), PencilConfig(order_p=6), TS)
    averages = [m.average_residue for m in dec.modes]
    assert averages == sorted(averages, reverse=True)
    assert all(m.angular_freq_omega >= 0 for m in dec.modes)


def test_single_stream_recovery():
    event = _clean_event(seed=2, n_streams=1)
    dec = decompose_channel(_streams(event), PencilConfig(order_p=6), TS)
    _assert_recovers(event, dec, 1e-6)


def test_pure_noise_is_low_confidence():
    noise = np.random.default_rng(4).normal(size=(20, 300))
    dec = decompose_channel(noise, PencilConfig(order_p=6), TS)
    assert dec.rank_error_E_p > 0.5
    assert "low_confidence" in dec.flags


def test_zero_channel_is_degenerate():
    dec = decompose_channel(np.zeros((3, 50)), PencilConfig(order_p=2), TS)
    assert dec.modes == () and "degenerate" in dec.flags
    assert dec.degenerate_streams == (0, 1, 2)


def test_zero_stream_excluded_from_envelope():
    streams = _streams(_clean_event(seed=6, n_streams=4)).copy()
    streams[1] = 0.0
    dec = decompose_channel(streams, PencilConfig(order_p=6), TS)
    assert dec.degenerate_streams == (1,)
    lo, mean, hi = error_envelope(dec)
    assert hi <= 1e-8 and lo <= mean <= hi


def test_invalid_pencil_parameter():
    with pytest.raises(InputError):
        decompose_channel(np.ones((2, 20)), PencilConfig(order_p=6, pencil_L=3), TS)


def test_decompose_event_and_diagnostics():
    event = simulate_event(LINE_TRIP_TEMPLATE, n_streams=5, n_samples=120, seed=1,
                           snr_db=math.inf, with_trend=False)
    decs = decompose_event(event.record, PencilConfig(order_p=6))
    assert list(decs) == [ChannelKind.VPM, ChannelKind.VPA, ChannelKind.F]
    diag = pencil_diagnostics(decs[ChannelKind.F], p_max=10)
    assert diag.E_p_curve.shape == (10,)
    assert diag.per_stream_E_i.shape == (5,)
    with pytest.raises(InputError):
        decompose_event(event.record, PencilConfig(), [ChannelKind.IPM])


# ---------------------------------------------------------------------------
# Model-order selection
# ---------------------------------------------------------------------------

def _planted_corpus(n_pairs, snr_db, count=4):
    template = LINE_TRIP_TEMPLATE.truncated(n_pairs)
    return [
        EventRecord(f"e{i}", 0, _clean_event(template, seed=40 + i, snr_db=snr_db).record.channels)
        for i in range(count)
    ]


def test_noise_free_two_mode_order():
    assert select_model_order(_planted_corpus(1, math.inf), PencilConfig()) == 2


@pytest.mark.parametrize("n_pairs", [1, 2, 3])
def test_order_at_60_db(n_pairs):
    report = model_order_report(_planted_corpus(n_pairs, 60.0), PencilConfig())
    assert report.qualified
    assert report.order_p == 2 * n_pairs


def test_unit_threshold_selects_one():
    events = _planted_corpus(3, 60.0, count=2)
    assert select_model_order(events, PencilConfig(error_threshold=1.0)) == 1


def test_short_windows_cap_the_sweep(caplog):
    events = [
        EventRecord(f"s{i}", 0, _clean_event(LINE_TRIP_TEMPLATE.truncated(1), seed=60 + i,
                                             n_streams=4, n_samples=30).record.channels)
        for i in range(2)
    ]
    with caplog.at_level(logging.WARNING, logger="modal"):
        report = model_order_report(events, PencilConfig())
    assert report.p_cap == 14
    assert report.qualified and report.order_p == 2
    assert "cap" in caplog.text
    assert select_model_order(events, PencilConfig()) == 2


def test_window_too_short_for_any_order():
    rec = EventRecord("t", 0, {ChannelKind.VPM: np.ones((2, 3))})
    with pytest.raises(InputError):
        model_order_report([rec], PencilConfig())


def test_no_qualifying_order_falls_back_to_p_max():
    noise = np.random.default_rng(9).normal(size=(10, 200))
    rec = EventRecord("n", 0, {ChannelKind.VPM: noise})
    report = model_order_report([rec], PencilConfig(p_max=8))
    assert not report.qualified and report.order_p == 8
    assert report.first_passing_E_p[("n", "VPM")] is None


# ---------------------------------------------------------------------------
# Corpus-scale recovery
# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_hundred_noise_free_events():
    for seed in range(100):
        template = (LINE_TRIP_TEMPLATE, GENERATION_LOSS_TEMPLATE)[seed % 2]
        event = _clean_event(template, seed=1000 + seed)
        dec = decompose_channel(_streams(event), PencilConfig(order_p=6), TS)
        _assert_recovers(event, dec, 1e-6)
        assert dec.max_reconstruction_error <= 1e-8


@pytest.mark.slow
def test_hundred_events_at_40_db():
    hits, mean_errors = 0, []
    for seed in range(100):
        template = (LINE_TRIP_TEMPLATE, GENERATION_LOSS_TEMPLATE)[seed % 2]
        event = _clean_event(template, seed=2000 + seed, snr_db=40.0)
        dec = decompose_channel(_streams(event), PencilConfig(order_p=6), TS)
        top = dec.modes[0]
        omega_ok = abs(top.angular_freq_omega - event.omegas[0]) <= 0.01 * event.omegas[0]
        sigma_ok = abs(top.damping_sigma - event.sigmas[0]) <= 0.05 * abs(event.sigmas[0])
        hits += omega_ok and sigma_ok
        mean_errors.append(dec.reconstruction_errors.mean())
    assert hits >= 95
    assert np.mean(mean_errors) < 0.01
