"""Deterministic in-process backends used for testing and CI.

Two generators ship: ``fill-nearest`` produces plausible-looking images by
flooding unknown pixels with their nearest known neighbor, ``hash-noise``
is adversarial and fills unknowns with seeded hash noise. Both are pure
functions of the request, and both quantize their inputs and outputs to
wire precision so in-process and over-HTTP results are byte-identical.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError, InvalidStateError
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
    image_digest,
)

__all__ = [
    "nearest_fill",
    "FillNearestBackend",
    "HashNoiseBackend",
    "ConstantDepthBackend",
    "OracleDepthBackend",
    "ConstantCaptionBackend",
    "ManifestCaptionBackend",
    "mock_suite",
    "MOCK_GENERATORS",
]

_ALL_MODES = frozenset(Mode)


def nearest_fill(values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Fill unknown pixels with the color of their nearest known pixel.

    Distance is 4-connected breadth-first distance; among equally near
    sources the one with the smaller row, then column, wins. A fully
    unknown input fills with mid gray.
    """
    values = np.asarray(values, dtype=np.float32)
    known = np.asarray(known, dtype=bool)
    h, w = known.shape
    if known.all():
        return values.copy()
    if not known.any():
        return np.full_like(values, 0.5)

    big = np.int64(h * w)
    key = np.where(known, np.arange(h * w, dtype=np.int64).reshape(h, w), big)
    assigned = known.copy()
    while not assigned.all():
        cand = np.full((h, w), big, dtype=np.int64)
        np.minimum(cand[1:, :], np.where(assigned[:-1, :], key[:-1, :], big), out=cand[1:, :])
        np.minimum(cand[:-1, :], np.where(assigned[1:, :], key[1:, :], big), out=cand[:-1, :])
        np.minimum(cand[:, 1:], np.where(assigned[:, :-1], key[:, :-1], big), out=cand[:, 1:])
        np.minimum(cand[:, :-1], np.where(assigned[:, 1:], key[:, 1:], big), out=cand[:, :-1])
        newly = ~assigned & (cand < big)
        if not newly.any():
            break
        key[newly] = cand[newly]
        assigned |= newly
    return values.reshape(-1, 3)[key.reshape(-1)].reshape(h, w, 3)


def _hash_noise(seed: int, height: int, width: int) -> np.ndarray:
    """Counter-based hash noise in [0, 1), a pure function of (seed, v, u, channel)."""
    vs, us, cs = np.meshgrid(
        np.arange(height, dtype=np.uint64),
        np.arange(width, dtype=np.uint64),
        np.arange(3, dtype=np.uint64),
        indexing="ij",
    )
    with np.errstate(over="ignore"):
        z = (
            np.uint64(seed)
            + vs * np.uint64(0x9E3779B97F4A7C15)
            + us * np.uint64(0xD1B54A32D192ED03)
            + cs * np.uint64(0x8CB92BA72F3D8DD7)
        )
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return ((z >> np.uint64(11)).astype(np.float64) / float(2**53)).astype(np.float32)


def _depth_shade(depth: DepthMap) -> np.ndarray:
    """Gray shading from depth: near is bright, far is dark, invalid is black."""
    d = depth.values.astype(np.float64)
    m = depth.validity
    if not m.any():
        return np.zeros((depth.height, depth.width, 3), dtype=np.float32)
    lo, hi = float(d[m].min()), float(d[m].max())
    if hi - lo < 1e-12:
        shade = np.full_like(d, 0.5)
    else:
        shade = (hi - d) / (hi - lo)
    shade = np.where(m, shade, 0.0)
    return np.repeat(shade[..., None], 3, axis=2).astype(np.float32)


class _DeterministicGenerator(GenerationBackend):
    name = "mock"

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(self.name, _ALL_MODES, deterministic=True)

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        req.validate()
        self._check_capability(req)
        req = req.snapped_to_wire()
        out = self._render(req)
        out = ImageBuffer(np.clip(out, 0.0, 1.0)).quantized()
        return GenerationResponse(out, backend_id=self.name, seed_used=req.seed)

    def _render(self, req: GenerationRequest) -> np.ndarray:
        raise NotImplementedError


class FillNearestBackend(_DeterministicGenerator):
    """Holes become their nearest known pixel; strength mixes in depth shading."""

    name = "fill-nearest"

    def _render(self, req: GenerationRequest) -> np.ndarray:
        if req.mode is Mode.DEPTH_TO_IMAGE:
            return _depth_shade(req.depth)

        init = req.init_image.values
        if req.mask is not None:
            w = req.mask.astype(np.float64)[..., None]
            known = req.mask >= 0.5
        else:
            w = np.ones((req.init_image.height, req.init_image.width, 1), dtype=np.float64)
            known = np.ones((req.init_image.height, req.init_image.width), dtype=bool)
        filled = nearest_fill(init, known).astype(np.float64)

        if req.mode is Mode.OUTPAINT:
            return (w * init + (1.0 - w) * filled).astype(np.float32)

        # image_to_image: strength pulls the filled image toward a flat
        # depth-shaded rendering, the mock's stand-in for fresh content.
        if req.depth is not None:
            target = _depth_shade(req.depth).astype(np.float64)
        else:
            target = np.full_like(filled, 0.5)
        s = float(req.strength)
        return ((1.0 - s) * filled + s * target).astype(np.float32)


class HashNoiseBackend(_DeterministicGenerator):
    """Adversarial mock: unknown content becomes seeded hash noise."""

    name = "hash-noise"

    def _render(self, req: GenerationRequest) -> np.ndarray:
        width, height = req.dimensions()
        noise = _hash_noise(req.seed, height, width).astype(np.float64)
        if req.mode is Mode.DEPTH_TO_IMAGE:
            return noise.astype(np.float32)

        init = req.init_image.values.astype(np.float64)
        if req.mode is Mode.OUTPAINT:
            w = req.mask.astype(np.float64)[..., None]
            return (w * init + (1.0 - w) * noise).astype(np.float32)

        keep = req.mask.astype(np.float64)[..., None] if req.mask is not None else 1.0
        w = keep * (1.0 - float(req.strength))
        return (w * init + (1.0 - w) * noise).astype(np.float32)


class ConstantDepthBackend(DepthBackend):
    """Every pixel at a fixed metric depth."""

    def __init__(self, depth: float = 3.0):
        if not depth > 0:
            raise InvalidArgumentError("constant depth must be positive")
        self.depth = float(depth)

    def estimate_depth(self, img: ImageBuffer) -> DepthMap:
        return DepthMap.constant(img.width, img.height, self.depth)


class OracleDepthBackend(DepthBackend):
    """Returns pre-registered depth maps, keyed by image content.

    Unregistered images fall back to a constant depth when one is
    configured, otherwise raise.
    """

    def __init__(self, fallback: float | None = None):
        self._registry: dict[str, DepthMap] = {}
        self._fallback = ConstantDepthBackend(fallback) if fallback is not None else None

    def register(self, img: ImageBuffer, depth: DepthMap) -> None:
        if (depth.width, depth.height) != (img.width, img.height):
            raise InvalidArgumentError("registered depth must match the image dimensions")
        self._registry[image_digest(img)] = depth

    def estimate_depth(self, img: ImageBuffer) -> DepthMap:
        hit = self._registry.get(image_digest(img))
        if hit is not None:
            return hit
        if self._fallback is not None:
            return self._fallback.estimate_depth(img)
        raise InvalidStateError("no depth registered for this image and no fallback configured")


class ConstantCaptionBackend(CaptionBackend):
    def __init__(self, text: str = "an indoor scene"):
        if not text:
            raise InvalidArgumentError("caption text must be non-empty")
        self.text = text

    def caption(self, img: ImageBuffer) -> str:
        return self.text


class ManifestCaptionBackend(CaptionBackend):
    """Returns registered captions by image content, with a documented default."""

    FALLBACK = "an indoor scene"

    def __init__(self):
        self._registry: dict[str, str] = {}

    def register(self, img: ImageBuffer, caption: str) -> None:
        if not caption:
            raise InvalidArgumentError("caption must be non-empty")
        self._registry[image_digest(img)] = caption

    def caption(self, img: ImageBuffer) -> str:
        return self._registry.get(image_digest(img), self.FALLBACK)


MOCK_GENERATORS = {
    FillNearestBackend.name: FillNearestBackend,
    HashNoiseBackend.name: HashNoiseBackend,
}


def mock_suite(generator: str = "fill-nearest", depth_constant: float = 3.0) -> BackendSuite:
    """A fully deterministic suite: named generator, constant depth, manifest captions."""
    try:
        gen_cls = MOCK_GENERATORS[generator]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown mock generator {generator!r}; choose from {sorted(MOCK_GENERATORS)}"
        ) from None
    return BackendSuite(
        generator=gen_cls(),
        depth=ConstantDepthBackend(depth_constant),
        captioner=ManifestCaptionBackend(),
    )
