"""Service configuration and the model-id registry."""

from __future__ import annotations

from dataclasses import dataclass

# Model identifiers accepted at startup, per capability. "stub" routes to
# the deterministic in-process algorithms shared with the wcgen mocks.
KNOWN_GENERATORS = ("stub", "sd-controlnet-depth")
KNOWN_DEPTH_MODELS = ("stub", "dpt-hybrid")
KNOWN_CAPTIONERS = ("stub", "blip2")


@dataclass(frozen=True)
class ServiceConfig:
    generator_model: str = "stub"
    depth_model: str = "stub"
    caption_model: str = "stub"
    device: str = "cpu"
    max_jobs: int = 2
    max_body_bytes: int = 32 * 1024 * 1024
    max_pixels: int = 4096 * 4096
    stub_depth: float = 3.0

    def __post_init__(self):
        if self.max_jobs <= 0:
            raise ValueError("max_jobs must be positive")
        if self.max_body_bytes <= 0 or self.max_pixels <= 0:
            raise ValueError("request size limits must be positive")
        if self.generator_model not in KNOWN_GENERATORS:
            raise ValueError(
                f"unknown generator model {self.generator_model!r}; known: {KNOWN_GENERATORS}"
            )
        if self.depth_model not in KNOWN_DEPTH_MODELS:
            raise ValueError(f"unknown depth model {self.depth_model!r}; known: {KNOWN_DEPTH_MODELS}")
        if self.caption_model not in KNOWN_CAPTIONERS:
            raise ValueError(f"unknown caption model {self.caption_model!r}; known: {KNOWN_CAPTIONERS}")

    @property
    def deterministic(self) -> bool:
        """Byte-level determinism is promised only by the stub algorithms."""
        return (
            self.generator_model == "stub"
            and self.depth_model == "stub"
            and self.caption_model == "stub"
        )

    def stubbed(self) -> "ServiceConfig":
        from dataclasses import replace

        return replace(self, generator_model="stub", depth_model="stub", caption_model="stub")
