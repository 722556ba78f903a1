import numpy as np
import pytest

from wcgen.dataio import SyntheticSceneSpec, synth_scene
from wcgen.geometry import ImageBuffer, intrinsics_from_fov


def line_scene_spec(n_viewpoints: int = 5, image_size: int = 128) -> SyntheticSceneSpec:
    """A near-straight walk through the room: every bearing snaps to the
    same horizontal reference view and consecutive views overlap well."""
    positions = tuple(
        (4.0 + (0.05 if i % 2 else -0.05), 1.2 + i * 0.4, 1.5) for i in range(n_viewpoints)
    )
    return SyntheticSceneSpec(
        room=(8.0, 6.0, 3.0),
        viewpoint_positions=positions,
        image_size=image_size,
        scene_id="line-room",
    )


@pytest.fixture(scope="session")
def line_scene():
    return synth_scene(line_scene_spec(), seed=7)


@pytest.fixture(scope="session")
def k128():
    return intrinsics_from_fov(128, 128, 60.0)


@pytest.fixture(scope="session")
def k512():
    return intrinsics_from_fov(512, 512, 60.0)


def random_image(width: int, height: int, seed: int) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    return ImageBuffer(rng.random((height, width, 3), dtype=np.float32)).quantized()


def smooth_image(width: int, height: int, seed: int) -> ImageBuffer:
    """Bandlimited content whose bilinear resampling loss is far below one
    gray level; the right texture for warp round-trip bounds."""
    rng = np.random.default_rng(seed)
    uu, vv = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    img = np.zeros((height, width, 3))
    for c in range(3):
        acc = 0.5 * np.ones_like(uu)
        for _ in range(3):
            fu, fv = rng.uniform(0.2, 1.5, 2) / max(width, height)
            phase = rng.uniform(0, 2 * np.pi)
            acc = acc + 0.12 * np.sin(2 * np.pi * (fu * uu + fv * vv) + phase)
        img[..., c] = acc
    return ImageBuffer(np.clip(img, 0.0, 1.0).astype(np.float32)).quantized()
