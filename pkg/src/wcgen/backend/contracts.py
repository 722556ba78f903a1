"""Contracts every generation/depth/caption backend implements."""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from ..errors import CapabilityError, InvalidArgumentError
from ..geometry import DepthMap, ImageBuffer
from ..viewwarp import BlurredMask

__all__ = [
    "Mode",
    "GenerationRequest",
    "GenerationResponse",
    "BackendDescriptor",
    "GenerationBackend",
    "DepthBackend",
    "CaptionBackend",
    "BackendSuite",
    "WIRE_DEPTH_SCALE",
]

# Units per meter used when depth maps cross the wire as 16-bit PNGs.
WIRE_DEPTH_SCALE = 4000


class Mode(str, Enum):
    DEPTH_TO_IMAGE = "depth_to_image"
    IMAGE_TO_IMAGE = "image_to_image"
    OUTPAINT = "outpaint"


def _as_mask_array(mask) -> np.ndarray:
    if isinstance(mask, BlurredMask):
        return mask.values
    m = np.asarray(mask)
    if m.dtype == bool:
        return m.astype(np.float32)
    return BlurredMask(m).values  # reuse its range validation


@dataclass(eq=False)
class GenerationRequest:
    """One generation call: mode, conditioning, and sampling parameters.

    ``mask`` holds keep weights in [0, 1] where 1 means the pixel is known
    and must be preserved; fractional weights are a per-pixel blend floor.
    """

    mode: Mode
    prompt: str = ""
    depth: DepthMap | None = None
    init_image: ImageBuffer | None = None
    mask: np.ndarray | None = None
    strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.mask is not None:
            self.mask = _as_mask_array(self.mask)
        if not (0.0 <= self.strength <= 1.0):
            raise InvalidArgumentError(f"strength must lie in [0, 1], got {self.strength}")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidArgumentError("seed must fit in 64 unsigned bits")
        self.seed = int(self.seed)

    def validate(self) -> None:
        if self.mode is Mode.DEPTH_TO_IMAGE:
            if self.depth is None:
                raise InvalidArgumentError("depth_to_image requires a depth map")
            if not self.prompt:
                raise InvalidArgumentError("depth_to_image requires a prompt")
        elif self.mode is Mode.IMAGE_TO_IMAGE:
            if self.init_image is None:
                raise InvalidArgumentError("image_to_image requires an init image")
        elif self.mode is Mode.OUTPAINT:
            if self.init_image is None or self.mask is None:
                raise InvalidArgumentError("outpaint requires an init image and a mask")
        for name, arr_dims in self._conditioning_dims().items():
            if arr_dims != self.dimensions():
                raise InvalidArgumentError(f"{name} dimensions {arr_dims} disagree with {self.dimensions()}")

    def _conditioning_dims(self) -> dict[str, tuple[int, int]]:
        dims = {}
        if self.depth is not None:
            dims["depth"] = (self.depth.width, self.depth.height)
        if self.init_image is not None:
            dims["init_image"] = (self.init_image.width, self.init_image.height)
        if self.mask is not None:
            dims["mask"] = (self.mask.shape[1], self.mask.shape[0])
        return dims

    def dimensions(self) -> tuple[int, int]:
        """(width, height) of the conditioning, which the output must match."""
        for cond in (self.init_image, self.depth):
            if cond is not None:
                return (cond.width, cond.height)
        if self.mask is not None:
            return (self.mask.shape[1], self.mask.shape[0])
        raise InvalidArgumentError("request carries no conditioning to size the output")

    def snapped_to_wire(self) -> "GenerationRequest":
        """Quantize conditioning onto wire precision (8-bit colors/masks, 16-bit depth).

        Backends apply this before generating so an in-process call and the
        same call routed through the HTTP protocol give identical results.
        """
        req = replace(self)
        if req.init_image is not None:
            req.init_image = req.init_image.quantized()
        if req.mask is not None:
            req.mask = (np.round(req.mask.astype(np.float64) * 255.0) / 255.0).astype(np.float32)
        if req.depth is not None:
            units = np.round(req.depth.values.astype(np.float64) * WIRE_DEPTH_SCALE)
            units = np.clip(units, 1, 65535)
            valid = req.depth.validity
            req.depth = DepthMap(
                np.where(valid, units / WIRE_DEPTH_SCALE, 0.0).astype(np.float32), valid
            )
        return req


@dataclass(eq=False)
class GenerationResponse:
    image: ImageBuffer
    backend_id: str
    seed_used: int


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    capabilities: frozenset[Mode]
    deterministic: bool


class GenerationBackend(ABC):
    @abstractmethod
    def describe(self) -> BackendDescriptor: ...

    @abstractmethod
    def generate(self, req: GenerationRequest) -> GenerationResponse: ...

    def _check_capability(self, req: GenerationRequest) -> None:
        desc = self.describe()
        if req.mode not in desc.capabilities:
            raise CapabilityError(f"backend {desc.name!r} does not support mode {req.mode.value!r}")


class DepthBackend(ABC):
    @abstractmethod
    def estimate_depth(self, img: ImageBuffer) -> DepthMap: ...


class CaptionBackend(ABC):
    @abstractmethod
    def caption(self, img: ImageBuffer) -> str: ...


@dataclass(eq=False)
class BackendSuite:
    """The three model capabilities the pipeline consumes, bundled."""

    generator: GenerationBackend
    depth: DepthBackend
    captioner: CaptionBackend


def image_digest(img: ImageBuffer) -> str:
    """Stable content hash of an image at 8-bit precision."""
    q = np.round(img.values.astype(np.float64) * 255.0).astype(np.uint8)
    return hashlib.sha256(q.tobytes()).hexdigest()
