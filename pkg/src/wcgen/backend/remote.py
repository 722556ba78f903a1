"""HTTP client for remote backends speaking the wire protocol.

Transient failures (connection errors, timeouts, 502/503/504) are retried
with exponential backoff; every response is validated against the backend
invariants before it is returned. A per-client semaphore caps in-flight
requests so pipelines cannot flood the endpoint.
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from ..errors import (
    MalformedResponseError,
    ProtocolViolationError,
    RemoteRequestError,
    TransportError,
)
from ..geometry import DepthMap, ImageBuffer
from .contracts import (
    BackendDescriptor,
    BackendSuite,
    CaptionBackend,
    DepthBackend,
    GenerationBackend,
    GenerationRequest,
    GenerationResponse,
    Mode,
)
from . import protocol

__all__ = ["RemoteConfig", "RemoteGenerationBackend", "RemoteDepthBackend", "RemoteCaptionBackend", "remote_generate", "remote_suite"]

_RETRYABLE_STATUS = (502, 503, 504)
# Preservation contract for kept pixels, in color units.
_KEEP_TOLERANCE = 1.0 / 255.0 + 1e-9


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.2
    max_in_flight: int = 8
    _gate: threading.Semaphore = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_gate", threading.Semaphore(self.max_in_flight))

    def url(self, path: str) -> str:
        return self.endpoint.rstrip("/") + path


def _post_json(cfg: RemoteConfig, path: str, payload: dict) -> dict:
    last_exc: Exception | None = None
    last_status: int | None = None
    attempts = 0
    for attempt in range(cfg.retries + 1):
        attempts = attempt + 1
        try:
            with cfg._gate:
                resp = requests.post(cfg.url(path), json=payload, timeout=cfg.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_exc = exc
            if attempt < cfg.retries:
                time.sleep(cfg.backoff * (2**attempt))
            continue
        if resp.status_code in _RETRYABLE_STATUS and attempt < cfg.retries:
            last_status = resp.status_code
            time.sleep(cfg.backoff * (2**attempt))
            continue
        return _handle_response(resp)
    raise TransportError(
        f"{cfg.url(path)} unreachable after {attempts} attempts: {last_exc or last_status}",
        attempts=attempts,
        last_status=last_status,
    )


def _handle_response(resp: requests.Response) -> dict:
    try:
        body = resp.json()
    except ValueError as exc:
        raise MalformedResponseError(
            f"endpoint returned non-JSON body with HTTP {resp.status_code}"
        ) from exc
    if resp.status_code >= 400:
        err = body.get("error") if isinstance(body, dict) else None
        if isinstance(err, dict) and "code" in err:
            raise RemoteRequestError(str(err["code"]), str(err.get("message", "")), resp.status_code)
        raise MalformedResponseError(f"HTTP {resp.status_code} without a structured error body")
    if not isinstance(body, dict):
        raise MalformedResponseError("expected a JSON object response")
    return body


class RemoteGenerationBackend(GenerationBackend):
    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 0.2,
        max_in_flight: int = 8,
    ):
        self.cfg = RemoteConfig(endpoint, timeout, retries, backoff, max_in_flight)

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(f"remote:{self.cfg.endpoint}", frozenset(Mode), deterministic=False)

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        req.validate()
        body = _post_json(self.cfg, "/generate", protocol.request_to_json(req))
        resp = protocol.response_from_json(body)
        self._validate(req, resp)
        return resp

    @staticmethod
    def _validate(req: GenerationRequest, resp: GenerationResponse) -> None:
        if (resp.image.width, resp.image.height) != req.dimensions():
            raise MalformedResponseError(
                f"response image is {resp.image.width}x{resp.image.height}, "
                f"request conditioning is {req.dimensions()[0]}x{req.dimensions()[1]}"
            )
        if req.mode is Mode.OUTPAINT:
            wire = req.snapped_to_wire()
            keep = wire.mask >= 1.0
            if keep.any():
                diff = np.abs(
                    resp.image.values[keep].astype(np.float64)
                    - wire.init_image.values[keep].astype(np.float64)
                )
                if float(diff.max()) > _KEEP_TOLERANCE:
                    raise ProtocolViolationError(
                        f"outpaint altered kept pixels by up to {float(diff.max()):.4f}"
                    )


class RemoteDepthBackend(DepthBackend):
    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 0.2,
        max_in_flight: int = 8,
    ):
        self.cfg = RemoteConfig(endpoint, timeout, retries, backoff, max_in_flight)

    def estimate_depth(self, img: ImageBuffer) -> DepthMap:
        payload = {"image": base64.b64encode(protocol.encode_image_png(img)).decode("ascii")}
        body = _post_json(self.cfg, "/depth", payload)
        depth = protocol.depth_response_from_json(body)
        if (depth.width, depth.height) != (img.width, img.height):
            raise MalformedResponseError("depth response dimensions differ from the query image")
        if not depth.validity.all():
            raise ProtocolViolationError("depth estimator returned non-positive depth values")
        return depth


class RemoteCaptionBackend(CaptionBackend):
    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        retries: int = 3,
        backoff: float = 0.2,
        max_in_flight: int = 8,
    ):
        self.cfg = RemoteConfig(endpoint, timeout, retries, backoff, max_in_flight)

    def caption(self, img: ImageBuffer) -> str:
        payload = {"image": base64.b64encode(protocol.encode_image_png(img)).decode("ascii")}
        body = _post_json(self.cfg, "/caption", payload)
        text = body.get("caption")
        if not isinstance(text, str):
            raise MalformedResponseError("caption response must carry a caption string")
        if not text:
            raise ProtocolViolationError("caption endpoint returned an empty caption")
        return text


def remote_generate(endpoint: str, req: GenerationRequest, **kwargs) -> GenerationResponse:
    """One-shot generation against a remote endpoint."""
    return RemoteGenerationBackend(endpoint, **kwargs).generate(req)


def remote_suite(endpoint: str, **kwargs) -> BackendSuite:
    """All three capabilities served by one remote endpoint."""
    return BackendSuite(
        generator=RemoteGenerationBackend(endpoint, **kwargs),
        depth=RemoteDepthBackend(endpoint, **kwargs),
        captioner=RemoteCaptionBackend(endpoint, **kwargs),
    )
