"""JSON-over-HTTP inference service.

Endpoints wrap a single read-only InferenceSession: checkpoints are loaded
once at startup and never mutated, so identical requests return identical
payloads regardless of interleaving. Voxel grids travel as base64 TGSV
blobs inside JSON envelopes; meshes as ASCII PLY bodies.
"""

from __future__ import annotations

import base64
import logging
import threading
import uuid

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .infer import InferenceSession, sample_seed
from .mesh import ply_text
from .voxels import encode_voxels

MAX_SERVICE_RES = 64
log = logging.getLogger("tgshape.service")


class GenerateRequest(BaseModel):
    text: str
    count: int = Field(default=1, ge=1, le=16)
    seed: int | None = None
    resolution: int | None = None


class ManipulateRequest(BaseModel):
    original_text: str
    edited_text: str
    mode: str
    seed: int
    resolution: int | None = None


class MeshRequest(BaseModel):
    text: str
    seed: int = 0
    resolution: int | None = None
    iso: float = 0.5


def _shape_envelope(shape) -> dict:
    return {"seed": shape.noise_seed,
            "voxels": base64.b64encode(encode_voxels(shape.grid)).decode("ascii")}


def _bad_request(status: int, detail: str) -> JSONResponse:
    return JSONResponse({"error": "bad request", "detail": detail},
                        status_code=status)


def _check_text(*texts: str) -> JSONResponse | None:
    for t in texts:
        if not t.strip():
            return _bad_request(422, "text must not be empty")
    return None


def _check_resolution(r: int | None) -> JSONResponse | None:
    if r is None:
        return None
    if r < 1 or r > MAX_SERVICE_RES or (r & (r - 1)) != 0:
        return _bad_request(
            422, f"resolution must be a power of two in [1, {MAX_SERVICE_RES}]")
    return None


def build_app(run_dir: str) -> FastAPI:
    session = InferenceSession.from_run_dir(run_dir)
    default_res = min(session.profile.resolution, MAX_SERVICE_RES)
    app = FastAPI(title="tgshape service")
    app.state.session = session
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    # single CPU-bound model: serialize inference, keep request determinism
    infer_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        malformed = any(e.get("type") == "json_invalid" for e in exc.errors())
        detail = "; ".join(
            f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}"
            for e in exc.errors())
        return JSONResponse({"error": "invalid request", "detail": detail},
                            status_code=400 if malformed else 422)

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        error_id = uuid.uuid4().hex[:12]
        log.exception("request %s failed [%s]", request.url.path, error_id)
        return JSONResponse({"error": "internal failure", "detail": error_id},
                            status_code=500)

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok",
                "config_hash": session.profile.fingerprint()}

    @app.post("/api/generate")
    def generate(req: GenerateRequest):
        bad = _check_text(req.text) or _check_resolution(req.resolution)
        if bad:
            return bad
        seed = req.seed if req.seed is not None else session.profile.seed
        with infer_lock:
            shapes = session.generate(req.text, req.count, seed,
                                      req.resolution or default_res)
        return {"shapes": [_shape_envelope(s) for s in shapes]}

    @app.post("/api/manipulate")
    def manipulate(req: ManipulateRequest):
        bad = (_check_text(req.original_text, req.edited_text)
               or _check_resolution(req.resolution))
        if bad:
            return bad
        if req.mode not in ("shape-edit", "color-edit"):
            return _bad_request(422, f"unknown mode '{req.mode}'")
        with infer_lock:
            before, after = session.manipulate(
                req.original_text, req.edited_text, req.mode, req.seed,
                req.resolution or default_res)
        return {"before": _shape_envelope(before),
                "after": _shape_envelope(after)}

    @app.post("/api/mesh")
    def mesh(req: MeshRequest):
        bad = _check_text(req.text) or _check_resolution(req.resolution)
        if bad:
            return bad
        if not 0.0 < req.iso < 1.0:
            return _bad_request(422, "iso must lie in (0, 1)")
        with infer_lock:
            words, text_feat = session.text_features(req.text)
            feat = session.feature_from_noise(text_feat,
                                              sample_seed(req.seed, 0))
            extracted = session.extract_mesh(
                feat, words, req.resolution or default_res, req.iso)
        return Response(content=ply_text(extracted), media_type="text/plain",
                        headers={"Content-Disposition":
                                 'attachment; filename="shape.ply"'})

    return app
