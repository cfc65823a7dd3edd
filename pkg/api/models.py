"""
Pydantic request/response models for all API endpoints.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

class EventPayload(BaseModel):
    """One event window: channel name -> streams x samples."""
    event_id: str = Field(default="event")
    label: int = Field(default=0, ge=0, le=1, description="0 line_trip | 1 generation_loss")
    sample_rate_hz: float = Field(default=30.0, gt=0)
    channels: dict[str, list[list[float]]] = Field(..., description="VPM | VPA | IPM | IPA | F")


# ---------------------------------------------------------------------------
# Decompose endpoint
# ---------------------------------------------------------------------------

class DecomposeRequest(BaseModel):
    event: EventPayload
    order_p: int | None = Field(default=None, ge=1, description="pencil order; config default when omitted")
    detrend: bool = True


class ModeOut(BaseModel):
    sigma: float
    omega: float
    frequency_hz: float
    conjugate: bool
    residue_magnitudes: list[float]
    residue_angles: list[float]


class ChannelDecomposition(BaseModel):
    channel: str
    order_p: int
    pencil_L: int
    E_p: float
    E_i: list[float]
    modes: list[ModeOut]
    flags: list[str]


class DecomposeResponse(BaseModel):
    event_id: str
    channels: list[ChannelDecomposition]


# ---------------------------------------------------------------------------
# Identify endpoint
# ---------------------------------------------------------------------------

class IdentifyResponse(BaseModel):
    event_id: str
    label: int
    class_name: str
    score: float
    model_kind: str
    flags: list[str]


# ---------------------------------------------------------------------------
# Synthetic event endpoint
# ---------------------------------------------------------------------------

class SynthRequest(BaseModel):
    template: str = Field(..., description="line_trip | generation_loss")
    seed: int = 0
    n_streams: int = Field(default=95, ge=1)
    n_samples: int = Field(default=300, ge=4)
    snr_db: float | None = None


class SynthResponse(BaseModel):
    event: EventPayload
    sigmas: list[float]
    omegas: list[float]
    snr_db: float
    loading: float
