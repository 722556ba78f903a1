"""Reference remote backend speaking the wcgen wire protocol.

Serves /generate, /depth, and /caption with real models (depth-conditioned
diffusion, monocular depth, captioning) or, in stub mode, with the same
deterministic fill algorithm the in-process mocks use, so CI can verify
the wire contract without model weights.
"""

from .config import ServiceConfig
from .app import create_app

__all__ = ["ServiceConfig", "create_app"]
__version__ = "0.1.0"
