"""
Per-event feature vectors from per-channel modal decompositions.

For every channel the vector holds, in order:
    [omega_1..omega_p', sigma_1..sigma_p',
     |R| of the m' largest-residue streams for mode 1, ..., mode p',
     angle of the same streams for mode 1, ..., mode p']
Channel blocks are concatenated in canonical channel order, so an event
described by n_ch channels has d = 2 * n_ch * (p' + m' * p') features.

Stream order inside each mode block is content-based (descending residue
magnitude, ties by larger angle), so which PMU sits at which index varies
from event to event and the vector never depends on input stream order.

Depends on: core.py, preprocess.py, modal.py
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from core import (
    ChannelKind,
    Dataset,
    EventRecord,
    FeatureVector,
    InputError,
    ModalDecomposition,
    Mode,
    canonical_channels,
)
from modal import PencilConfig, decompose_event, mode_sort_key
from preprocess import detrend_event

logger = logging.getLogger(__name__)


PAIR_RTOL = 1e-6
DEFAULT_CHANNELS = (ChannelKind.VPM, ChannelKind.VPA, ChannelKind.F)


@dataclass(frozen=True)
class FeatureConfig:
    """p' modes per channel, m' streams per mode, over the listed channels."""
    p_prime: int = 3
    m_prime: int = 20
    channels: tuple[ChannelKind, ...] = DEFAULT_CHANNELS

    def __post_init__(self):
        if self.p_prime < 1:
            raise InputError(f"p_prime must be >= 1, got {self.p_prime}")
        if self.m_prime < 1:
            raise InputError(f"m_prime must be >= 1, got {self.m_prime}")
        if not self.channels:
            raise InputError("feature config needs at least one channel")
        object.__setattr__(self, "channels", canonical_channels(self.channels))

    @property
    def per_channel_dimension(self) -> int:
        return 2 * (self.p_prime + self.m_prime * self.p_prime)

    @property
    def dimension(self) -> int:
        return len(self.channels) * self.per_channel_dimension

    def feature_names(self) -> tuple[str, ...]:
        return tuple(
            name for kind in self.channels
            for name in channel_feature_names(kind, self.p_prime, self.m_prime)
        )


class ChannelFeatures(NamedTuple):
    values: np.ndarray
    names: tuple[str, ...]
    flags: tuple[str, ...]


def channel_feature_names(channel: ChannelKind | None, p_prime: int,
                          m_prime: int) -> tuple[str, ...]:
    prefix = f"{channel.value}." if channel is not None else ""
    modes = range(1, p_prime + 1)
    streams = range(1, m_prime + 1)
    return (
        tuple(f"{prefix}mode{k}.omega" for k in modes)
        + tuple(f"{prefix}mode{k}.sigma" for k in modes)
        + tuple(f"{prefix}mode{k}.res_mag_{i}" for k in modes for i in streams)
        + tuple(f"{prefix}mode{k}.res_ang_{i}" for k in modes for i in streams)
    )


# ---------------------------------------------------------------------------
# Mode ranking
# ---------------------------------------------------------------------------

def _mirror(mode: Mode) -> Mode:
    """The omega >= 0 image of a mode stored below the real axis."""
    return Mode(
        damping_sigma=mode.damping_sigma,
        angular_freq_omega=-mode.angular_freq_omega,
        residue_magnitudes=mode.residue_magnitudes,
        residue_angles=_negate_angles(mode.residue_angles),
        conjugate=mode.conjugate,
    )


def _negate_angles(angles: np.ndarray) -> np.ndarray:
    out = -np.asarray(angles, dtype=float)
    out[out <= -math.pi] = math.pi
    return out


def _is_partner(a: Mode, b: Mode) -> bool:
    tol = PAIR_RTOL * max(1.0, math.hypot(a.damping_sigma, a.angular_freq_omega))
    return (abs(a.damping_sigma - b.damping_sigma) <= tol
            and abs(a.angular_freq_omega + b.angular_freq_omega) <= tol
            and a.angular_freq_omega * b.angular_freq_omega < 0)


def collapse_conjugates(modes: Sequence[Mode]) -> list[Mode]:
    """Keep one omega >= 0 member per conjugate pair; real modes pass through."""
    used: set[int] = set()
    survivors = []
    for a, mode in enumerate(modes):
        if a in used:
            continue
        used.add(a)
        partner = next((b for b in range(a + 1, len(modes))
                        if b not in used and _is_partner(mode, modes[b])), None)
        if partner is not None:
            used.add(partner)
            keep = mode if mode.angular_freq_omega > 0 else modes[partner]
            survivors.append(Mode(keep.damping_sigma, keep.angular_freq_omega,
                                  keep.residue_magnitudes, keep.residue_angles,
                                  conjugate=True))
        elif mode.angular_freq_omega < 0:
            survivors.append(_mirror(mode))
        else:
            survivors.append(mode)
    return survivors


def dedup_and_rank_modes(dec: ModalDecomposition, p_prime: int) -> list[Mode]:
    """The p' modes with the largest average residue, zero-padded to length p'."""
    ranked = sorted(collapse_conjugates(dec.modes), key=mode_sort_key)
    if len(ranked) < p_prime:
        logger.debug("only %d distinct modes for p'=%d; zero padding", len(ranked), p_prime)
        ranked.extend(Mode.zero(dec.n_streams) for _ in range(p_prime - len(ranked)))
    return ranked[:p_prime]


def _distinct_mode_count(dec: ModalDecomposition) -> int:
    return len(collapse_conjugates(dec.modes))


# ---------------------------------------------------------------------------
# Channel and event vectors
# ---------------------------------------------------------------------------

def _top_streams(mode: Mode, live: np.ndarray, m_prime: int) -> tuple[np.ndarray, np.ndarray]:
    """Magnitudes and angles of the m' largest residues, zero-padded."""
    mags, angles = mode.residue_magnitudes, mode.residue_angles
    if live.size == mags.size:
        mags, angles = mags[live], angles[live]
    order = np.lexsort((-angles, -mags))[:m_prime]
    out_mag = np.zeros(m_prime)
    out_ang = np.zeros(m_prime)
    out_mag[:order.size] = mags[order]
    out_ang[:order.size] = angles[order]
    return out_mag, out_ang


def channel_features(dec: ModalDecomposition, cfg: FeatureConfig,
                     channel: ChannelKind | None = None) -> ChannelFeatures:
    """The 2(p' + m'p') features of one channel, plus padding flags."""
    p, m = cfg.p_prime, cfg.m_prime
    tag = channel.value if channel is not None else "channel"
    flags = []

    if _distinct_mode_count(dec) < p:
        flags.append(f"padded_modes:{tag}")
    live = np.ones(dec.n_streams, dtype=bool)
    live[list(dec.degenerate_streams)] = False
    if int(live.sum()) < m:
        flags.append(f"padded_streams:{tag}")

    modes = dedup_and_rank_modes(dec, p)
    omegas = np.array([mode.angular_freq_omega for mode in modes])
    sigmas = np.array([mode.damping_sigma for mode in modes])
    blocks = [_top_streams(mode, live, m) for mode in modes]
    values = np.concatenate(
        [omegas, sigmas] + [mag for mag, _ in blocks] + [ang for _, ang in blocks]
    )
    return ChannelFeatures(values, channel_feature_names(channel, p, m), tuple(flags))


def build_feature_vector(event: EventRecord, decs: Mapping[ChannelKind, ModalDecomposition],
                         cfg: FeatureConfig) -> FeatureVector:
    """Concatenate the channel blocks of cfg.channels in canonical order."""
    missing = [kind.value for kind in cfg.channels if kind not in decs]
    if missing:
        raise InputError(
            f"event {event.event_id}: no decomposition for channel(s) {', '.join(missing)}"
        )

    values, names, flags = [], [], []
    for kind in cfg.channels:
        block = channel_features(decs[kind], cfg, kind)
        values.append(block.values)
        names.extend(block.names)
        flags.extend(block.flags)
        flags.extend(f"{flag}:{kind.value}" for flag in decs[kind].flags)

    if flags:
        logger.warning("event %s: %s", event.event_id, ", ".join(flags))
    return FeatureVector(
        event_id=event.event_id,
        label=event.label,
        values=np.concatenate(values),
        names=tuple(names),
        flags=tuple(flags),
    )


def extract_features(record: EventRecord, pencil_cfg: PencilConfig,
                     feature_cfg: FeatureConfig) -> FeatureVector:
    """Detrend, decompose every configured channel, and build the vector."""
    decs = decompose_event(detrend_event(record), pencil_cfg, feature_cfg.channels)
    return build_feature_vector(record, decs, feature_cfg)


def extract_all(records: Sequence[EventRecord], pencil_cfg: PencilConfig,
                feature_cfg: FeatureConfig, workers: int = 1) -> list[FeatureVector]:
    """Feature vectors for many events, in event_id order.

    With workers > 1 events are fanned out to a process pool; the result
    does not depend on the worker count.
    """
    ordered = sorted(records, key=lambda r: r.event_id)
    work = partial(extract_features, pencil_cfg=pencil_cfg, feature_cfg=feature_cfg)
    if workers <= 1 or len(ordered) < 2:
        return [work(r) for r in ordered]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, ordered, chunksize=max(1, len(ordered) // (4 * workers))))


def build_dataset(vectors: Sequence[FeatureVector]) -> Dataset:
    """Rows sorted by event_id; every row must share the first row's schema."""
    return Dataset.from_rows(sorted(vectors, key=lambda v: v.event_id))


# ---------------------------------------------------------------------------
# m' diagnostics
# ---------------------------------------------------------------------------

def residue_ratio_curve(dec: ModalDecomposition, mode_rank: int = 1) -> np.ndarray:
    """Residue magnitudes of the mode_rank-th mode over its largest, descending."""
    if mode_rank < 1:
        raise InputError(f"mode_rank is 1-based, got {mode_rank}")
    mode = dedup_and_rank_modes(dec, mode_rank)[mode_rank - 1]
    mags = np.sort(mode.residue_magnitudes)[::-1]
    if mags.size == 0 or mags[0] <= 0.0:
        return np.zeros(mags.size)
    return mags / mags[0]


def suggest_m_prime(decs: Sequence[ModalDecomposition], threshold: float,
                    coverage: float = 0.95, mode_rank: int = 1) -> int:
    """Smallest m' such that, in a `coverage` share of the decompositions,
    every stream beyond the first m' has residue ratio below `threshold`.

    Advisory only: nothing in the pipeline applies it automatically.
    """
    if not decs:
        raise InputError("need at least one decomposition")
    if not 0.0 < threshold < 1.0:
        raise InputError(f"threshold must be in (0, 1), got {threshold}")
    if not 0.0 < coverage <= 1.0:
        raise InputError(f"coverage must be in (0, 1], got {coverage}")

    above = np.sort([
        int(np.count_nonzero(residue_ratio_curve(dec, mode_rank) >= threshold))
        for dec in decs
    ])
    idx = max(0, math.ceil(coverage * above.size) - 1)
    return max(1, int(above[idx]))
