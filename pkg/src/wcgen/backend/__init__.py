"""Generation, depth, and caption backends: contracts, mocks, wire protocol."""

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
from .mocks import (
    ConstantCaptionBackend,
    ConstantDepthBackend,
    FillNearestBackend,
    HashNoiseBackend,
    ManifestCaptionBackend,
    OracleDepthBackend,
    mock_suite,
    nearest_fill,
)
from .remote import RemoteCaptionBackend, RemoteDepthBackend, RemoteGenerationBackend, remote_generate, remote_suite
from .server import MockService

__all__ = [
    "Mode",
    "GenerationRequest",
    "GenerationResponse",
    "BackendDescriptor",
    "GenerationBackend",
    "DepthBackend",
    "CaptionBackend",
    "BackendSuite",
    "FillNearestBackend",
    "HashNoiseBackend",
    "ConstantDepthBackend",
    "OracleDepthBackend",
    "ConstantCaptionBackend",
    "ManifestCaptionBackend",
    "mock_suite",
    "nearest_fill",
    "RemoteGenerationBackend",
    "RemoteDepthBackend",
    "RemoteCaptionBackend",
    "remote_generate",
    "remote_suite",
    "MockService",
]
