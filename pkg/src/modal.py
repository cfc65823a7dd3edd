"""
Multi-signal Matrix Pencil engine.

Identifies the p damped sinusoidal modes shared by the m streams of one
PMU channel:
    1. Stack the per-stream Hankel matrices vertically.
    2. Keep the rank-p part of the stack (SVD truncation) and record E_p.
    3. Split the truncated stack into H1 (first L columns) and H2 (last L
       columns); the poles Z_k are the nonzero eigenvalues of
       pinv_p(H1) @ H2.
    4. Solve one Vandermonde least-squares system per stream for the
       complex residues, reconstruct, and record E_i per stream.
    5. Convert Z_k to (sigma_k, omega_k) via lambda_k = ln(Z_k) / T_s and
       collapse conjugate pairs onto their omega >= 0 member.

Model-order selection sweeps p until both E_p and every E_i fall below the
error threshold for every event and channel.

Depends on: core.py
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from core import (
    ChannelKind,
    EventRecord,
    InputError,
    MIN_SAMPLES,
    ModalDecomposition,
    Mode,
    UnderdeterminedSignalError,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

DEFAULT_ORDER_P = 6
DEFAULT_ERROR_THRESHOLD = 0.01   # the 1% rule for E_p and E_i
DEFAULT_P_MAX = 20

NONZERO_EIGENVALUE_TOL = 1e-8
DISTINCT_POLE_TOL = 1e-10
PAIRING_RTOL = 1e-6
RANK_RTOL = 1e-10                # singular values below this (relative) are rank noise
DEGENERATE_NORM = 1e-12


# ---------------------------------------------------------------------------
# Configuration and diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PencilConfig:
    """Pencil settings. pencil_L = "auto" resolves to N // 2."""
    order_p: int = DEFAULT_ORDER_P
    pencil_L: int | str = "auto"
    error_threshold: float = DEFAULT_ERROR_THRESHOLD
    p_max: int = DEFAULT_P_MAX

    def __post_init__(self):
        if self.order_p < 1:
            raise InputError(f"order_p must be >= 1, got {self.order_p}")
        if self.p_max < 1:
            raise InputError(f"p_max must be >= 1, got {self.p_max}")
        if self.error_threshold <= 0:
            raise InputError(f"error_threshold must be positive, got {self.error_threshold}")
        if self.pencil_L != "auto" and (not isinstance(self.pencil_L, int) or self.pencil_L < 1):
            raise InputError(f"pencil_L must be 'auto' or a positive integer, got {self.pencil_L!r}")

    def resolve_L(self, n_samples: int, order_p: int | None = None) -> int:
        """Pencil parameter for an N-sample window; enforces p < L < N - p."""
        p = self.order_p if order_p is None else order_p
        L = n_samples // 2 if self.pencil_L == "auto" else int(self.pencil_L)
        if not p < L < n_samples - p:
            raise InputError(
                f"pencil parameter L={L} violates p < L < N - p (p={p}, N={n_samples})"
            )
        return L

    def with_order(self, order_p: int) -> PencilConfig:
        return replace(self, order_p=order_p)


@dataclass(frozen=True)
class RankTruncation:
    """Best rank-p approximation of a Hankel stack plus its SVD."""
    h_p: np.ndarray
    error: float
    singular_values: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class PencilDiagnostics:
    singular_values: np.ndarray
    E_p_curve: np.ndarray
    per_stream_E_i: np.ndarray


# ---------------------------------------------------------------------------
# Hankel construction
# ---------------------------------------------------------------------------

def hankel_single(samples, L: int) -> np.ndarray:
    """(N-L) x (L+1) Hankel matrix with entry (r, c) = samples[r + c]."""
    y = np.asarray(samples, dtype=float)
    if y.ndim != 1:
        raise InputError(f"expected a 1-D stream, got shape {y.shape}")
    n_samples = y.shape[0]
    if not 1 <= L <= n_samples - 2:
        raise InputError(f"pencil parameter L={L} out of range for N={n_samples}")
    return scipy.linalg.hankel(y[: n_samples - L], y[n_samples - L - 1:])


def hankel_stacked(streams, L: int) -> np.ndarray:
    """m(N-L) x (L+1) stack of per-stream Hankel blocks, in stream order."""
    rows = [np.asarray(s, dtype=float).ravel() for s in streams]
    if not rows:
        raise InputError("no streams to stack")
    lengths = {r.shape[0] for r in rows}
    if len(lengths) != 1:
        raise InputError(f"ragged streams (lengths {sorted(lengths)})")
    return np.vstack([hankel_single(r, L) for r in rows])


# ---------------------------------------------------------------------------
# Truncation and error curves
# ---------------------------------------------------------------------------

def _svd(matrix: np.ndarray):
    try:
        return scipy.linalg.svd(matrix, full_matrices=False)
    except scipy.linalg.LinAlgError:
        return scipy.linalg.svd(matrix, full_matrices=False, lapack_driver="gesvd")


def error_curve(singular_values) -> np.ndarray:
    """E_p for p = 1..len(singular_values): sqrt(discarded energy / total)."""
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0:
        return np.zeros(0)
    energy = s ** 2
    tail = np.cumsum(energy[::-1])[::-1]   # tail[k] = sum of energy[k:]
    total = tail[0]
    if total <= 0.0:
        return np.zeros(s.size)
    return np.sqrt(np.append(tail[1:], 0.0) / total)


def rank_p_truncate(H, p: int) -> RankTruncation:
    """Best rank-p approximation of H with E_p = ||H - H_p||_F / ||H||_F."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2:
        raise InputError(f"expected a matrix, got shape {H.shape}")
    if not 1 <= p <= min(H.shape):
        raise InputError(f"rank p={p} outside [1, {min(H.shape)}]")

    u, s, vt = _svd(H)
    if s[0] <= 0.0:
        logger.warning("rank_p_truncate: zero matrix, E_p defined as 0")
        return RankTruncation(h_p=H.copy(), error=0.0, singular_values=s, degenerate=True)

    h_p = (u[:, :p] * s[:p]) @ vt[:p]
    return RankTruncation(h_p=h_p, error=float(error_curve(s)[p - 1]), singular_values=s)


# ---------------------------------------------------------------------------
# Poles and residues
# ---------------------------------------------------------------------------

def pencil_eigenvalues(H_p, p: int) -> np.ndarray:
    """The p largest-magnitude generalized eigenvalues of the pair (H2, H1).

    Computed as the spectrum of pinv_p(H1) @ H2. Because pinv_p(H1) =
    V_p S_p^-1 U_p^T, the nonzero eigenvalues equal those of the p x p core
    S_p^-1 U_p^T H2 V_p, which is what gets diagonalised.
    """
    H = np.asarray(H_p, dtype=float)
    if H.ndim != 2 or H.shape[1] < p + 1:
        raise InputError(f"pencil needs at least p+1={p + 1} columns, got shape {H.shape}")

    h1, h2 = H[:, :-1], H[:, 1:]
    u, s, vt = _svd(h1)
    rank = int(np.count_nonzero(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
    keep = min(p, rank)
    if keep == 0:
        raise UnderdeterminedSignalError("pencil has no nonzero singular values", found=0)

    core = (u[:, :keep].T @ h2 @ vt[:keep].T) / s[:keep, None]
    z = scipy.linalg.eigvals(core)
    z = z[np.argsort(-np.abs(z), kind="stable")]
    z = z[np.abs(z) > NONZERO_EIGENVALUE_TOL]
    if z.size < p:
        raise UnderdeterminedSignalError(
            f"only {z.size} of the requested {p} eigenvalues are nonzero", found=int(z.size)
        )
    return z[:p]


def _vandermonde(z: np.ndarray, n_samples: int) -> np.ndarray:
    """N x p matrix with entry (n, k) = z_k ** n."""
    return np.vander(z, n_samples, increasing=True).T


def solve_residues(streams, z) -> np.ndarray:
    """Least-squares complex residues R (m x p) with y_i(n) ~ sum_k R[i, k] z_k^n."""
    Y = np.atleast_2d(np.asarray(streams, dtype=float))
    z = np.asarray(z, dtype=complex).ravel()
    if z.size == 0:
        raise InputError("no poles to solve residues for")
    if z.size > 1:
        gaps = np.abs(z[:, None] - z[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() <= DISTINCT_POLE_TOL:
            raise InputError("duplicate poles make the Vandermonde system ill-conditioned")

    V = _vandermonde(z, Y.shape[1])
    solution, *_ = scipy.linalg.lstsq(V, Y.T.astype(complex))
    return solution.T


def reconstruct(z, residues, n_samples: int) -> np.ndarray:
    """Noise-free synthesis y_i(n) = Re sum_k R[i, k] z_k^n, as an (m x N) array."""
    z = np.asarray(z, dtype=complex).ravel()
    R = np.atleast_2d(np.asarray(residues, dtype=complex))
    if R.shape[1] != z.size:
        raise InputError(f"{R.shape[1]} residue columns for {z.size} poles")
    return (_vandermonde(z, n_samples) @ R.T).real.T


def reconstruction_errors(original, reconstructed) -> tuple[np.ndarray, np.ndarray]:
    """Per-stream E_i = ||yhat_i - y_i|| / ||y_i|| and the zero-norm stream mask.

    Streams with ||y_i|| < 1e-12 report E_i = 0 and are flagged in the mask.
    """
    y = np.atleast_2d(np.asarray(original, dtype=float))
    y_hat = np.atleast_2d(np.asarray(reconstructed, dtype=float))
    if y.shape != y_hat.shape:
        raise InputError(f"shape mismatch {y.shape} vs {y_hat.shape}")

    norms = np.linalg.norm(y, axis=1)
    degenerate = norms < DEGENERATE_NORM
    errors = np.zeros(y.shape[0])
    ok = ~degenerate
    errors[ok] = np.linalg.norm(y_hat[ok] - y[ok], axis=1) / norms[ok]
    return errors, degenerate


# ---------------------------------------------------------------------------
# Conjugate pairing
# ---------------------------------------------------------------------------

def _principal_angle(values) -> np.ndarray:
    """Angles of complex values in (-pi, pi]."""
    angles = np.atleast_1d(np.angle(np.asarray(values, dtype=complex)))
    angles[angles <= -math.pi] = math.pi
    return angles


def pair_conjugates(z) -> list[tuple[int, int | None]]:
    """Group pole indices into (representative, partner) pairs.

    Z_a pairs with Z_b when |Z_a - conj(Z_b)| <= 1e-6 * max(1, |Z_a|) and the
    two sit on opposite sides of the real axis. The representative is the
    member with nonnegative imaginary part. Real poles have no partner.
    """
    z = np.asarray(z, dtype=complex).ravel()
    used: set[int] = set()
    groups: list[tuple[int, int | None]] = []
    for a in range(z.size):
        if a in used:
            continue
        used.add(a)
        tol = PAIRING_RTOL * max(1.0, abs(z[a]))
        if abs(z[a].imag) <= tol:
            groups.append((a, None))
            continue
        best, best_gap = None, tol
        for b in range(z.size):
            if b in used or np.sign(z[b].imag) == np.sign(z[a].imag):
                continue
            gap = abs(z[a] - np.conj(z[b]))
            if gap <= best_gap:
                best, best_gap = b, gap
        if best is None:
            groups.append((a, None))
            continue
        used.add(best)
        groups.append((a, best) if z[a].imag >= 0 else (best, a))
    return groups


def mode_sort_key(mode: Mode) -> tuple[float, float, float]:
    """Descending average residue, then larger omega, then larger sigma."""
    return (-mode.average_residue, -mode.angular_freq_omega, -mode.damping_sigma)


def modes_from_poles(z, residues, sample_period: float) -> list[Mode]:
    """One Mode per conjugate pair or real pole, each with omega >= 0, ranked."""
    z = np.asarray(z, dtype=complex).ravel()
    R = np.atleast_2d(np.asarray(residues, dtype=complex))
    modes = []
    for rep, partner in pair_conjugates(z):
        lam = np.log(z[rep]) / sample_period
        sigma, omega = float(lam.real), float(lam.imag)
        col = R[:, rep]
        if omega < 0:
            # unpaired pole below the real axis: store its conjugate image
            omega, col = -omega, np.conj(col)
        modes.append(Mode(
            damping_sigma=sigma,
            angular_freq_omega=omega,
            residue_magnitudes=np.abs(col),
            residue_angles=_principal_angle(col),
            conjugate=partner is not None,
        ))
    modes.sort(key=mode_sort_key)
    return modes


# ---------------------------------------------------------------------------
# End-to-end decomposition
# ---------------------------------------------------------------------------

def decompose_channel(streams, cfg: PencilConfig, sample_period: float) -> ModalDecomposition:
    """Fit p common modes to the (already detrended) streams of one channel."""
    Y = np.atleast_2d(np.asarray(streams, dtype=float))
    n_streams, n_samples = Y.shape
    if n_streams == 0 or n_samples < MIN_SAMPLES:
        raise InputError(f"need >= 1 stream of >= {MIN_SAMPLES} samples, got shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise InputError("streams contain non-finite samples")
    if sample_period <= 0:
        raise InputError(f"sample period must be positive, got {sample_period}")

    p = cfg.order_p
    L = cfg.resolve_L(n_samples)
    trunc = rank_p_truncate(hankel_stacked(Y, L), p)

    if trunc.degenerate:
        return ModalDecomposition(
            modes=(),
            pencil_order_p=p,
            pencil_L=L,
            rank_error_E_p=0.0,
            reconstruction_errors=np.zeros(n_streams),
            singular_values=trunc.singular_values,
            degenerate_streams=tuple(range(n_streams)),
            flags=("degenerate",),
        )

    flags = []
    try:
        z = pencil_eigenvalues(trunc.h_p, p)
    except UnderdeterminedSignalError as exc:
        if exc.found == 0:
            raise
        logger.warning("pencil under-determined: keeping %d of %d modes", exc.found, p)
        flags.append("underdetermined")
        z = pencil_eigenvalues(trunc.h_p, exc.found)

    residues = solve_residues(Y, z)
    errors, degenerate = reconstruction_errors(Y, reconstruct(z, residues, n_samples))
    live_errors = errors[~degenerate]
    if trunc.error > cfg.error_threshold or (
            live_errors.size and live_errors.max() > cfg.error_threshold):
        flags.append("low_confidence")
    if degenerate.any():
        logger.warning("%d zero-norm stream(s) excluded from residue ranking",
                       int(degenerate.sum()))

    return ModalDecomposition(
        modes=tuple(modes_from_poles(z, residues, sample_period)),
        pencil_order_p=p,
        pencil_L=L,
        rank_error_E_p=trunc.error,
        reconstruction_errors=errors,
        singular_values=trunc.singular_values,
        degenerate_streams=tuple(int(i) for i in np.flatnonzero(degenerate)),
        flags=tuple(flags),
    )


def decompose_event(record: EventRecord, cfg: PencilConfig,
                    channels: Sequence[ChannelKind] | None = None
                    ) -> dict[ChannelKind, ModalDecomposition]:
    """Decompose each requested channel of one (detrended) event."""
    kinds = record.channel_kinds if channels is None else tuple(channels)
    missing = [k.value for k in kinds if k not in record.channels]
    if missing:
        raise InputError(f"event {record.event_id} lacks channel(s) {', '.join(missing)}")
    return {
        kind: decompose_channel(record.channels[kind], cfg, record.sample_period)
        for kind in kinds
    }


def pencil_diagnostics(dec: ModalDecomposition, p_max: int | None = None) -> PencilDiagnostics:
    curve = error_curve(dec.singular_values)
    if p_max is not None:
        curve = curve[:p_max]
    return PencilDiagnostics(
        singular_values=dec.singular_values,
        E_p_curve=curve,
        per_stream_E_i=dec.reconstruction_errors,
    )


def error_envelope(dec: ModalDecomposition) -> tuple[float, float, float]:
    """(min, mean, max) reconstruction error over the non-degenerate streams."""
    mask = np.ones(dec.n_streams, dtype=bool)
    mask[list(dec.degenerate_streams)] = False
    live = dec.reconstruction_errors[mask]
    if live.size == 0:
        return 0.0, 0.0, 0.0
    return float(live.min()), float(live.mean()), float(live.max())


# ---------------------------------------------------------------------------
# Model-order selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelOrderReport:
    """Chosen p plus, per (event_id, channel), the smallest p with E_p <= threshold.

    p_cap is the largest order swept: p_max, or less when a window is too
    short to satisfy p < L < N - p at p_max.
    """
    order_p: int
    qualified: bool
    first_passing_E_p: Mapping[tuple[str, str], int | None]
    p_cap: int = DEFAULT_P_MAX


def max_supported_order(cfg: PencilConfig, n_samples: int) -> int:
    """Largest p <= p_max that an N-sample window admits under cfg's L."""
    L = n_samples // 2 if cfg.pencil_L == "auto" else int(cfg.pencil_L)
    return min(cfg.p_max, L - 1, n_samples - L - 1)


def model_order_report(events: Sequence[EventRecord], cfg: PencilConfig,
                       channels: Sequence[ChannelKind] | None = None) -> ModelOrderReport:
    """Smallest p <= p_cap with E_p and every E_i under the threshold everywhere."""
    if not events:
        raise InputError("model-order selection needs at least one event")

    pairs = []
    for record in events:
        kinds = record.channel_kinds if channels is None else tuple(channels)
        missing = [k.value for k in kinds if k not in record.channels]
        if missing:
            raise InputError(f"event {record.event_id} lacks channel(s) {', '.join(missing)}")
        pairs.extend((record, kind) for kind in kinds)
    shortest = min(record.channels[kind].shape[1] for record, kind in pairs)
    p_cap = max_supported_order(cfg, shortest)
    if p_cap < 1:
        raise InputError(f"a {shortest}-sample window admits no pencil order")
    if p_cap < cfg.p_max:
        logger.warning("%d-sample windows cap the order sweep at p=%d (p_max=%d)",
                       shortest, p_cap, cfg.p_max)

    threshold = cfg.error_threshold
    groups = []
    first_passing: dict[tuple[str, str], int | None] = {}
    for record, kind in pairs:
        data = record.channels[kind]
        L = cfg.resolve_L(data.shape[1], order_p=p_cap)
        curve = error_curve(_svd(hankel_stacked(data, L))[1])[:p_cap]
        passing = np.flatnonzero(curve <= threshold)
        first = int(passing[0]) + 1 if passing.size else None
        first_passing[(record.event_id, kind.value)] = first
        groups.append((record, kind, first))

    if any(first is None for *_, first in groups):
        logger.warning("no p <= %d brings E_p under %.3g for every event; using p=%d",
                       p_cap, threshold, p_cap)
        return ModelOrderReport(p_cap, False, first_passing, p_cap)

    start = max(first for *_, first in groups)
    for p in range(start, p_cap + 1):
        order_cfg = cfg.with_order(p)
        if all(_errors_pass(record, kind, order_cfg) for record, kind, _ in groups):
            return ModelOrderReport(p, True, first_passing, p_cap)

    logger.warning("no p <= %d brings every E_i under %.3g; using p=%d",
                   p_cap, threshold, p_cap)
    return ModelOrderReport(p_cap, False, first_passing, p_cap)


def _errors_pass(record: EventRecord, kind: ChannelKind, cfg: PencilConfig) -> bool:
    dec = decompose_channel(record.channels[kind], cfg, record.sample_period)
    return dec.rank_error_E_p <= cfg.error_threshold and \
        dec.max_reconstruction_error <= cfg.error_threshold


def select_model_order(events: Sequence[EventRecord], cfg: PencilConfig,
                       channels: Sequence[ChannelKind] | None = None) -> int:
    """The model order p chosen by the 1% rule (p_max with a warning if none qualifies)."""
    return model_order_report(events, cfg, channels).order_p
