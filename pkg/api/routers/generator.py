"""
Synthetic event router — one event drawn from a class template.
"""

from __future__ import annotations

from fastapi import APIRouter

from api.models import SynthRequest, SynthResponse
from api.routers.convert import settings, to_payload

from core import InputError
from synth import TEMPLATES_BY_NAME, simulate_event

router = APIRouter(tags=["synth"])


@router.post("/synth/event", response_model=SynthResponse)
def synth_event(req: SynthRequest):
    template = TEMPLATES_BY_NAME.get(req.template)
    if template is None:
        raise InputError(f"unknown template {req.template!r}; "
                         f"choose from {sorted(TEMPLATES_BY_NAME)}")
    cfg = settings()
    event = simulate_event(template, req.n_streams, req.n_samples,
                           1.0 / cfg.sample_rate_hz, cfg.channels, req.seed,
                           event_id=f"{template.name}-{req.seed}", snr_db=req.snr_db)
    return SynthResponse(
        event=to_payload(event.record),
        sigmas=event.sigmas.tolist(),
        omegas=event.omegas.tolist(),
        snr_db=event.snr_db,
        loading=event.loading,
    )
