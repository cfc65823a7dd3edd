"""
FastAPI backend for PMU event identification.

Thin API layer wrapping the computation modules in src/.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

# Add src/ to sys.path so we can import the computation modules
_SRC_DIR = str(Path(__file__).resolve().parent.parent / "src")
if _SRC_DIR not in sys.path:
    sys.path.insert(0, _SRC_DIR)

from core import InputError  # noqa: E402
from api.routers import decompose, generator, identify  # noqa: E402

app = FastAPI(
    title="PMU Event Identification",
    description="Modal decomposition and event classification for PMU streams",
    version="0.1.0",
)

# CORS: allow local dev clients
_origins = [
    "http://localhost:5173",
    "http://localhost:3000",
    "http://127.0.0.1:5173",
]
_extra_origin = os.getenv("CORS_ORIGIN")
if _extra_origin:
    _origins.append(_extra_origin)

app.add_middleware(
    CORSMiddleware,
    allow_origins=_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(InputError)
async def input_error_handler(request: Request, exc: InputError):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


# Mount routers
app.include_router(decompose.router, prefix="/api")
app.include_router(identify.router, prefix="/api")
app.include_router(generator.router, prefix="/api")


@app.get("/api/health")
async def health():
    return {"status": "ok"}
