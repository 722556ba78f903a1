"""Contract checks any wire-protocol backend must pass.

The same suite runs against the in-process mock server and against the
standalone service in stub mode; a hosted backend is conformant when
every check passes.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np
import requests

from ..geometry import DepthMap, ImageBuffer
from .contracts import GenerationRequest, Mode
from . import protocol
from .remote import RemoteCaptionBackend, RemoteDepthBackend, RemoteGenerationBackend

__all__ = ["CheckResult", "run_conformance"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _checker_image(width: int = 24, height: int = 16) -> ImageBuffer:
    v, u = np.mgrid[0:height, 0:width]
    r = ((u // 4 + v // 4) % 2).astype(np.float32)
    g = (u / max(width - 1, 1)).astype(np.float32)
    b = (v / max(height - 1, 1)).astype(np.float32)
    return ImageBuffer(np.stack([r, g, b], axis=-1)).quantized()


def _half_mask(width: int = 24, height: int = 16) -> np.ndarray:
    m = np.zeros((height, width), dtype=np.float32)
    m[:, width // 2 :] = 1.0
    return m


def run_conformance(base_url: str, *, timeout: float = 10.0) -> list[CheckResult]:
    """Run every contract check against a live endpoint; never raises."""
    results: list[CheckResult] = []

    def check(name: str, fn) -> None:
        try:
            detail = fn() or ""
            results.append(CheckResult(name, True, detail))
        except Exception as exc:
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))

    img = _checker_image()
    mask = _half_mask()
    depth = DepthMap.constant(img.width, img.height, 2.5)
    gen = RemoteGenerationBackend(base_url, timeout=timeout, retries=0)
    dep = RemoteDepthBackend(base_url, timeout=timeout, retries=0)
    cap = RemoteCaptionBackend(base_url, timeout=timeout, retries=0)

    def serialization_round_trip():
        req = GenerationRequest(
            Mode.OUTPAINT, prompt="x", init_image=img, mask=mask, depth=depth, strength=0.4, seed=99
        )
        body = protocol.request_to_json(req)
        back = protocol.request_from_json(body)
        assert back.mode == req.mode and back.prompt == req.prompt
        assert back.seed == req.seed and back.strength == req.strength
        assert np.array_equal(back.init_image.values, req.init_image.values)
        assert np.array_equal(back.mask, req.mask)
        assert np.array_equal(back.depth.values, req.depth.values)

    def outpaint_preserves_kept_pixels():
        req = GenerationRequest(Mode.OUTPAINT, prompt="p", init_image=img, mask=mask, seed=3)
        resp = gen.generate(req)  # client already enforces the invariant
        keep = mask >= 1.0
        diff = np.abs(resp.image.values[keep] - img.values[keep])
        assert float(diff.max()) <= 1.0 / 255.0 + 1e-9

    def generation_dimensions_match():
        req = GenerationRequest(Mode.DEPTH_TO_IMAGE, prompt="a room", depth=depth, seed=1)
        resp = gen.generate(req)
        assert (resp.image.width, resp.image.height) == (img.width, img.height)

    def generation_is_deterministic():
        req = GenerationRequest(Mode.OUTPAINT, prompt="p", init_image=img, mask=mask, seed=7)
        a = gen.generate(req)
        b = gen.generate(req)
        assert np.array_equal(a.image.values, b.image.values)
        assert protocol.encode_image_png(a.image) == protocol.encode_image_png(b.image)

    def depth_is_positive_and_sized():
        est = dep.estimate_depth(img)
        assert (est.width, est.height) == (img.width, img.height)
        assert est.validity.all() and float(est.values.min()) > 0

    def caption_is_non_empty():
        assert len(cap.caption(img)) > 0

    def unknown_mode_maps_to_400():
        body = {"mode": "teleport", "prompt": "x", "seed": 0}
        resp = requests.post(base_url.rstrip("/") + "/generate", json=body, timeout=timeout)
        assert resp.status_code == 400, f"expected 400, got {resp.status_code}"
        err = resp.json()["error"]
        assert err["code"] and err["message"] is not None

    def missing_conditioning_maps_to_400():
        body = {"mode": "image_to_image", "prompt": "x", "seed": 0}
        resp = requests.post(base_url.rstrip("/") + "/generate", json=body, timeout=timeout)
        assert resp.status_code == 400
        assert "error" in resp.json()

    def malformed_json_maps_to_400():
        resp = requests.post(
            base_url.rstrip("/") + "/generate",
            data=b"{not json",
            headers={"Content-Type": "application/json"},
            timeout=timeout,
        )
        assert 400 <= resp.status_code < 500
        assert "error" in resp.json()

    def bad_image_payload_maps_to_400():
        payload = {"image": base64.b64encode(b"not a png").decode("ascii")}
        resp = requests.post(base_url.rstrip("/") + "/depth", json=payload, timeout=timeout)
        assert resp.status_code == 400
        assert "error" in resp.json()

    check("serialization-round-trip", serialization_round_trip)
    check("outpaint-preserves-kept-pixels", outpaint_preserves_kept_pixels)
    check("generation-dimensions-match", generation_dimensions_match)
    check("generation-deterministic", generation_is_deterministic)
    check("depth-positive-and-sized", depth_is_positive_and_sized)
    check("caption-non-empty", caption_is_non_empty)
    check("unknown-mode-400", unknown_mode_maps_to_400)
    check("missing-conditioning-400", missing_conditioning_maps_to_400)
    check("malformed-json-400", malformed_json_maps_to_400)
    check("bad-image-payload-400", bad_image_payload_maps_to_400)
    return results
