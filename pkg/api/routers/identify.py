"""
Identify router — label a posted event with the trained model at MODEL_PATH.
"""

from __future__ import annotations

from functools import lru_cache

from fastapi import APIRouter, HTTPException

from api import config
from api.models import EventPayload, IdentifyResponse
from api.routers.convert import settings, to_record

from core import CLASS_NAMES, Dataset
from features import extract_features
from learn import TrainedModel
from lib.artifacts import load_model

router = APIRouter(tags=["identify"])


@lru_cache(maxsize=4)
def _model(path: str) -> TrainedModel:
    return load_model(path)


@router.post("/identify", response_model=IdentifyResponse)
def identify(event: EventPayload):
    if not config.MODEL_PATH:
        raise HTTPException(status_code=503, detail="MODEL_PATH is not configured")
    model = _model(config.MODEL_PATH)
    cfg = settings()
    vector = extract_features(to_record(event), cfg.pencil(), cfg.features())
    row = Dataset.from_rows([vector])

    score = float(model.decision_scores(row)[0])
    label = int(model.predict(row, cfg.threshold)[0])
    return IdentifyResponse(
        event_id=vector.event_id,
        label=label,
        class_name=CLASS_NAMES[label],
        score=score,
        model_kind=model.kind.value,
        flags=list(vector.flags),
    )
