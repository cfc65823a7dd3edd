"""
EventPayload <-> EventRecord, shared by the routers.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from api import config
from api.models import EventPayload

from core import ChannelKind, EventRecord, InputError, validate_event
from lib.settings import PipelineSettings, load_settings


def to_record(payload: EventPayload) -> EventRecord:
    kinds = [ChannelKind.parse(name) for name in payload.channels]
    try:
        channels = {kind: np.asarray(rows, dtype=float)
                    for kind, rows in zip(kinds, payload.channels.values())}
    except ValueError as exc:
        raise InputError(f"channel data must be rectangular numeric arrays ({exc})") from None
    if any(data.ndim != 2 for data in channels.values()):
        raise InputError("every channel must be a streams x samples array")
    record = EventRecord(event_id=payload.event_id, label=payload.label,
                         channels=channels, sample_rate_hz=payload.sample_rate_hz)
    problems = validate_event(record)
    if problems:
        raise InputError("; ".join(problems))
    return record


def to_payload(record: EventRecord) -> EventPayload:
    return EventPayload(
        event_id=record.event_id,
        label=record.label,
        sample_rate_hz=record.sample_rate_hz,
        channels={kind.value: data.tolist() for kind, data in record.channels.items()},
    )


@lru_cache(maxsize=1)
def settings() -> PipelineSettings:
    return load_settings(config.PIPELINE_CONFIG)
