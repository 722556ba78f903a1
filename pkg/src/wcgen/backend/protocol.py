"""Wire encoding for the HTTP backend protocol.

Bodies are JSON. Images travel as base64 8-bit RGB PNG, depth as base64
16-bit grayscale PNG with a declared ``depth_scale`` in units per meter
(0 encodes an invalid pixel), masks as 8-bit grayscale PNG where 255
means keep. Errors are ``{"error": {"code", "message"}}`` with 4xx/5xx.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

from ..errors import InvalidArgumentError, MalformedResponseError
from ..geometry import DepthMap, ImageBuffer
from .contracts import WIRE_DEPTH_SCALE, GenerationRequest, GenerationResponse, Mode

__all__ = [
    "encode_image_png",
    "decode_image_png",
    "encode_depth_png",
    "decode_depth_png",
    "encode_mask_png",
    "decode_mask_png",
    "request_to_json",
    "request_from_json",
    "response_to_json",
    "response_from_json",
    "depth_response_to_json",
    "depth_response_from_json",
    "error_body",
]


def encode_image_png(img: ImageBuffer) -> bytes:
    arr = np.round(img.values.astype(np.float64) * 255.0).astype(np.uint8)
    im = Image.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def decode_image_png(data: bytes) -> ImageBuffer:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except Exception as exc:
        raise MalformedResponseError(f"undecodable image PNG: {exc}") from exc
    if im.mode != "RGB":
        im = im.convert("RGB")
    arr = np.asarray(im, dtype=np.float32) / 255.0
    return ImageBuffer(arr)


def encode_depth_png(depth: DepthMap, depth_scale: int = WIRE_DEPTH_SCALE) -> bytes:
    if depth_scale <= 0:
        raise InvalidArgumentError("depth_scale must be positive")
    units = np.round(depth.values.astype(np.float64) * depth_scale)
    units = np.clip(units, 1, 65535)
    units = np.where(depth.validity, units, 0).astype("<u2")
    im = Image.frombytes("I;16", (depth.width, depth.height), units.tobytes())
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def decode_depth_png(data: bytes, depth_scale: int = WIRE_DEPTH_SCALE) -> DepthMap:
    if depth_scale <= 0:
        raise InvalidArgumentError("depth_scale must be positive")
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except Exception as exc:
        raise MalformedResponseError(f"undecodable depth PNG: {exc}") from exc
    if im.mode not in ("I;16", "I;16B", "I"):
        raise MalformedResponseError(f"depth PNG must be 16-bit grayscale, got mode {im.mode!r}")
    arr = np.asarray(im).astype(np.int64)
    if arr.min() < 0 or arr.max() > 65535:
        raise MalformedResponseError("depth PNG values exceed 16-bit range")
    validity = arr > 0
    values = (arr / depth_scale).astype(np.float32)
    values[~validity] = 0.0
    return DepthMap(values, validity)


def encode_mask_png(mask: np.ndarray) -> bytes:
    m = np.asarray(mask, dtype=np.float64)
    arr = np.round(np.clip(m, 0.0, 1.0) * 255.0).astype(np.uint8)
    im = Image.fromarray(arr, mode="L")
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def decode_mask_png(data: bytes) -> np.ndarray:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except Exception as exc:
        raise MalformedResponseError(f"undecodable mask PNG: {exc}") from exc
    if im.mode != "L":
        im = im.convert("L")
    return (np.asarray(im, dtype=np.float32) / 255.0).astype(np.float32)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str, what: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise MalformedResponseError(f"invalid base64 in {what}") from exc


def request_to_json(req: GenerationRequest, depth_scale: int = WIRE_DEPTH_SCALE) -> dict:
    body: dict = {
        "mode": req.mode.value,
        "prompt": req.prompt,
        "strength": req.strength,
        "seed": req.seed,
    }
    if req.depth is not None:
        body["depth"] = _b64(encode_depth_png(req.depth, depth_scale))
        body["depth_scale"] = depth_scale
    if req.init_image is not None:
        body["init_image"] = _b64(encode_image_png(req.init_image))
    if req.mask is not None:
        body["mask"] = _b64(encode_mask_png(req.mask))
    return body


def request_from_json(body: dict) -> GenerationRequest:
    if not isinstance(body, dict):
        raise InvalidArgumentError("request body must be a JSON object")
    try:
        mode = Mode(body["mode"])
    except (KeyError, ValueError) as exc:
        raise InvalidArgumentError(f"unknown or missing mode: {body.get('mode')!r}") from exc
    depth = None
    if body.get("depth") is not None:
        scale = int(body.get("depth_scale", WIRE_DEPTH_SCALE))
        depth = decode_depth_png(_unb64(body["depth"], "depth"), scale)
    init_image = None
    if body.get("init_image") is not None:
        init_image = decode_image_png(_unb64(body["init_image"], "init_image"))
    mask = None
    if body.get("mask") is not None:
        mask = decode_mask_png(_unb64(body["mask"], "mask"))
    return GenerationRequest(
        mode=mode,
        prompt=str(body.get("prompt", "")),
        depth=depth,
        init_image=init_image,
        mask=mask,
        strength=float(body.get("strength", 1.0)),
        seed=int(body.get("seed", 0)),
    )


def response_to_json(resp: GenerationResponse) -> dict:
    return {
        "image": _b64(encode_image_png(resp.image)),
        "backend_id": resp.backend_id,
        "seed_used": resp.seed_used,
    }


def response_from_json(body: dict) -> GenerationResponse:
    if not isinstance(body, dict) or "image" not in body:
        raise MalformedResponseError("generation response must carry an image")
    image = decode_image_png(_unb64(body["image"], "image"))
    try:
        return GenerationResponse(
            image=image,
            backend_id=str(body["backend_id"]),
            seed_used=int(body["seed_used"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponseError(f"generation response missing field: {exc}") from exc


def depth_response_to_json(depth: DepthMap, depth_scale: int = WIRE_DEPTH_SCALE) -> dict:
    return {"depth": _b64(encode_depth_png(depth, depth_scale)), "depth_scale": depth_scale}


def depth_response_from_json(body: dict) -> DepthMap:
    if not isinstance(body, dict) or "depth" not in body:
        raise MalformedResponseError("depth response must carry a depth map")
    scale = int(body.get("depth_scale", WIRE_DEPTH_SCALE))
    return decode_depth_png(_unb64(body["depth"], "depth"), scale)


def error_body(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}
