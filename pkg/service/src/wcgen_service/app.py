"""FastAPI application implementing the wire protocol.

Every invariant of the backend contract is enforced server-side: request
validation maps to 400, a full job queue to 503, and outpaint responses
are re-composited so kept pixels always match the init image, whatever
the underlying model did.
"""

from __future__ import annotations

import base64
import json
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from wcgen.errors import CapabilityError, InvalidArgumentError, WcgenError
from wcgen.geometry import ImageBuffer
from wcgen.backend import protocol
from wcgen.backend.contracts import GenerationRequest, GenerationResponse, Mode

from .config import ServiceConfig
from .models import build_suite

__all__ = ["create_app"]


class _ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content=protocol.error_body(code, message))


async def _read_json(request: Request, max_bytes: int) -> dict:
    body = await request.body()
    if len(body) > max_bytes:
        raise _ServiceError(400, "payload_too_large", f"request body exceeds {max_bytes} bytes")
    try:
        parsed = json.loads(body.decode("utf-8"))
    except Exception:
        raise _ServiceError(400, "bad_request", "body is not valid JSON") from None
    if not isinstance(parsed, dict):
        raise _ServiceError(400, "bad_request", "body must be a JSON object")
    return parsed


def _decode_image_field(body: dict, field: str) -> ImageBuffer:
    if body.get(field) is None:
        raise _ServiceError(400, "invalid_argument", f"request must carry {field!r}")
    try:
        data = base64.b64decode(str(body[field]).encode("ascii"), validate=True)
        return protocol.decode_image_png(data)
    except _ServiceError:
        raise
    except Exception as exc:
        raise _ServiceError(400, "invalid_argument", f"undecodable {field}: {exc}") from exc


def _check_pixels(width: int, height: int, limit: int) -> None:
    if width * height > limit:
        raise _ServiceError(400, "payload_too_large", f"{width}x{height} exceeds the pixel limit")


def _recomposite_known(req: GenerationRequest, resp: GenerationResponse) -> GenerationResponse:
    """Hard guarantee of the outpaint contract: kept pixels come from init."""
    if req.mode is not Mode.OUTPAINT:
        return resp
    wire = req.snapped_to_wire()
    keep = wire.mask >= 1.0
    if not keep.any():
        return resp
    out = resp.image.values.copy()
    out[keep] = wire.init_image.values[keep]
    return GenerationResponse(ImageBuffer(out), resp.backend_id, resp.seed_used)


def create_app(config: ServiceConfig) -> FastAPI:
    suite = build_suite(config)
    app = FastAPI(title="wcgen-service", version="0.1.0")
    app.state.config = config
    app.state.suite = suite
    app.state.jobs = threading.BoundedSemaphore(config.max_jobs)
    # one sampling job per device at a time; HTTP handling stays concurrent
    app.state.device_lock = threading.Lock()

    @app.exception_handler(_ServiceError)
    async def service_error_handler(_req, exc: _ServiceError):
        return _error_response(exc.status, exc.code, exc.message)

    @app.exception_handler(WcgenError)
    async def wcgen_error_handler(_req, exc: WcgenError):
        if isinstance(exc, CapabilityError):
            return _error_response(400, "unsupported_mode", str(exc))
        if isinstance(exc, InvalidArgumentError):
            return _error_response(400, "invalid_argument", str(exc))
        return _error_response(500, "internal", str(exc))

    @app.exception_handler(Exception)
    async def fallback_handler(_req, exc: Exception):
        return _error_response(500, "internal", str(exc))

    def _acquire_job():
        if not app.state.jobs.acquire(blocking=False):
            raise _ServiceError(503, "busy", "job queue is full, retry later")

    @app.get("/health")
    async def health():
        return {
            "ok": True,
            "models": {
                "generator": config.generator_model,
                "depth": config.depth_model,
                "caption": config.caption_model,
            },
            "deterministic": config.deterministic,
        }

    @app.post("/generate")
    async def generate(request: Request):
        body = await _read_json(request, config.max_body_bytes)
        try:
            req = protocol.request_from_json(body)
        except WcgenError as exc:
            raise _ServiceError(400, "invalid_argument", str(exc)) from exc
        req.validate()
        width, height = req.dimensions()
        _check_pixels(width, height, config.max_pixels)
        _acquire_job()
        try:
            with app.state.device_lock:
                resp = app.state.suite.generator.generate(req)
        finally:
            app.state.jobs.release()
        resp = _recomposite_known(req, resp)
        if (resp.image.width, resp.image.height) != (width, height):
            raise _ServiceError(500, "internal", "model returned mismatched dimensions")
        return JSONResponse(protocol.response_to_json(resp))

    @app.post("/depth")
    async def depth(request: Request):
        body = await _read_json(request, config.max_body_bytes)
        img = _decode_image_field(body, "image")
        _check_pixels(img.width, img.height, config.max_pixels)
        _acquire_job()
        try:
            estimate = app.state.suite.depth.estimate_depth(img)
        finally:
            app.state.jobs.release()
        if not estimate.validity.all() or float(estimate.values.min()) <= 0:
            raise _ServiceError(500, "internal", "depth model produced non-positive values")
        return JSONResponse(protocol.depth_response_to_json(estimate))

    @app.post("/caption")
    async def caption(request: Request):
        body = await _read_json(request, config.max_body_bytes)
        img = _decode_image_field(body, "image")
        _check_pixels(img.width, img.height, config.max_pixels)
        _acquire_job()
        try:
            text = app.state.suite.captioner.caption(img)
        finally:
            app.state.jobs.release()
        if not text:
            raise _ServiceError(500, "internal", "caption model produced empty text")
        return JSONResponse({"caption": text})

    return app
