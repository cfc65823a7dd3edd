"""
Decompose router — multi-signal Matrix Pencil fit of one posted event.
"""

from __future__ import annotations

from fastapi import APIRouter

from api.models import ChannelDecomposition, DecomposeRequest, DecomposeResponse, ModeOut
from api.routers.convert import settings, to_record

from modal import decompose_event
from preprocess import detrend_event

router = APIRouter(tags=["modal"])


@router.post("/decompose", response_model=DecomposeResponse)
def decompose(req: DecomposeRequest):
    record = to_record(req.event)
    if req.detrend:
        record = detrend_event(record)
    cfg = settings().pencil()
    if req.order_p is not None:
        cfg = cfg.with_order(req.order_p)

    channels = []
    for kind, dec in decompose_event(record, cfg).items():
        channels.append(ChannelDecomposition(
            channel=kind.value,
            order_p=dec.pencil_order_p,
            pencil_L=dec.pencil_L,
            E_p=dec.rank_error_E_p,
            E_i=dec.reconstruction_errors.tolist(),
            modes=[ModeOut(sigma=m.damping_sigma, omega=m.angular_freq_omega,
                           frequency_hz=m.frequency_hz, conjugate=m.conjugate,
                           residue_magnitudes=m.residue_magnitudes.tolist(),
                           residue_angles=m.residue_angles.tolist())
                   for m in dec.modes],
            flags=list(dec.flags),
        ))
    return DecomposeResponse(event_id=record.event_id, channels=channels)
