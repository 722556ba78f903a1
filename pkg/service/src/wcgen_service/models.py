"""Model adapters behind the three service capabilities.

The stub adapters reuse the deterministic algorithms from the wcgen mocks,
which is what makes stub responses byte-identical to in-process mock
results. Real-model adapters import their frameworks lazily so the
service (and its test suite) runs without GPU dependencies installed.
"""

from __future__ import annotations

import numpy as np

from wcgen.backend.contracts import (
    BackendSuite,
    CaptionBackend,
    DepthBackend,
    GenerationBackend,
    GenerationRequest,
    GenerationResponse,
    BackendDescriptor,
    Mode,
)
from wcgen.backend.mocks import ConstantDepthBackend, FillNearestBackend, ManifestCaptionBackend
from wcgen.geometry import DepthMap, ImageBuffer

from .config import ServiceConfig


def _lazy_import(module: str, extra: str):
    try:
        return __import__(module)
    except ImportError as exc:
        raise RuntimeError(
            f"model requires {module!r}; install the service with the [{extra}] extra"
        ) from exc


class DiffusionGenerator(GenerationBackend):
    """Depth-conditioned latent diffusion with init-image and mask support.

    Weights load at startup; sampling runs one job at a time per device.
    Determinism is not advertised: GPU kernels may reorder reductions.
    """

    def __init__(self, model_id: str, device: str):
        torch = _lazy_import("torch", "models")
        diffusers = _lazy_import("diffusers", "models")
        self.torch = torch
        self.device = device
        self.pipe = diffusers.StableDiffusionControlNetImg2ImgPipeline.from_pretrained(
            "lllyasviel/sd-controlnet-depth"
        ).to(device)
        self.name = model_id

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(self.name, frozenset(Mode), deterministic=False)

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        req.validate()
        torch = self.torch
        generator = torch.Generator(device=self.device).manual_seed(req.seed % 2**63)
        width, height = req.dimensions()
        kwargs = {
            "prompt": req.prompt or "a photorealistic indoor scene",
            "num_inference_steps": 30,
            "guidance_scale": 7.5,
            "generator": generator,
            "width": width,
            "height": height,
        }
        if req.depth is not None:
            depth_vis = np.clip(req.depth.values / max(float(req.depth.values.max()), 1e-6), 0, 1)
            kwargs["control_image"] = np.repeat(depth_vis[..., None], 3, axis=2)
        if req.init_image is not None:
            kwargs["image"] = req.init_image.values
            kwargs["strength"] = req.strength if req.mode is not Mode.DEPTH_TO_IMAGE else 1.0
        result = self.pipe(**kwargs).images[0]
        arr = np.asarray(result, dtype=np.float32) / 255.0
        return GenerationResponse(ImageBuffer(arr), backend_id=self.name, seed_used=req.seed)


class TransformerDepth(DepthBackend):
    """Monocular depth via a pre-trained dense prediction transformer."""

    def __init__(self, model_id: str, device: str):
        transformers = _lazy_import("transformers", "models")
        self.pipe = transformers.pipeline(
            "depth-estimation", model="Intel/dpt-hybrid-midas", device=device
        )
        self.name = model_id

    def estimate_depth(self, img: ImageBuffer) -> DepthMap:
        from PIL import Image

        pil = Image.fromarray(np.round(img.values * 255).astype(np.uint8))
        out = self.pipe(pil)
        raw = np.asarray(out["predicted_depth"], dtype=np.float32)
        # relative inverse depth -> positive metric-ish depth
        raw = raw - raw.min()
        depth = 10.0 / (1.0 + raw)
        if depth.shape != (img.height, img.width):
            from PIL import Image as I

            depth = np.asarray(
                I.fromarray(depth).resize((img.width, img.height), I.BILINEAR), dtype=np.float32
            )
        return DepthMap.from_values(np.maximum(depth, 1e-3))


class VisionLanguageCaptioner(CaptionBackend):
    def __init__(self, model_id: str, device: str):
        transformers = _lazy_import("transformers", "models")
        self.pipe = transformers.pipeline(
            "image-to-text", model="Salesforce/blip2-opt-2.7b", device=device
        )
        self.name = model_id

    def caption(self, img: ImageBuffer) -> str:
        from PIL import Image

        pil = Image.fromarray(np.round(img.values * 255).astype(np.uint8))
        out = self.pipe(pil)
        text = (out[0].get("generated_text") or "").strip()
        return text or "an indoor scene"


def build_suite(config: ServiceConfig) -> BackendSuite:
    """Instantiate the three capabilities; unknown ids were rejected by the
    config, so only loadability can fail here."""
    if config.generator_model == "stub":
        generator: GenerationBackend = FillNearestBackend()
    else:
        generator = DiffusionGenerator(config.generator_model, config.device)
    if config.depth_model == "stub":
        depth: DepthBackend = ConstantDepthBackend(config.stub_depth)
    else:
        depth = TransformerDepth(config.depth_model, config.device)
    if config.caption_model == "stub":
        captioner: CaptionBackend = ManifestCaptionBackend()
    else:
        captioner = VisionLanguageCaptioner(config.caption_model, config.device)
    return BackendSuite(generator, depth, captioner)
