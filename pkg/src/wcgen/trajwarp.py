"""Depth-based forward warping between camera poses.

Every source pixel with valid depth is lifted to 3D, carried through the
relative pose, and splatted onto the nearest target pixel; collisions are
resolved by a z-buffer. Splats never blend, so each valid output pixel
holds an exact copy of one source color. Holes are expected and are
filled downstream by generation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import DepthMap, ImageBuffer, Intrinsics, RelativePose

__all__ = ["GuidanceImage", "forward_warp", "rasterize_splats", "overlap_fraction", "Z_TIE_TOLERANCE"]

# Splats whose depths agree within this band count as a tie; the splat
# occurring first in source order wins, for determinism.
Z_TIE_TOLERANCE = 1e-6


@dataclass(eq=False)
class GuidanceImage:
    """Warped color with per-pixel validity and, optionally, winning splat depth.

    Invalid pixels have color exactly (0, 0, 0).
    """

    color: ImageBuffer
    validity: np.ndarray
    depth: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.validity, dtype=bool)
        if m.shape != (self.color.height, self.color.width):
            raise InvalidArgumentError("validity mask must match color dimensions")
        self.validity = m
        vals = self.color.values.copy()
        vals[~m] = 0.0
        self.color = ImageBuffer(vals)
        if self.depth is not None:
            d = np.asarray(self.depth, dtype=np.float32)
            if d.shape != m.shape:
                raise InvalidArgumentError("depth must match color dimensions")
            self.depth = d

    @property
    def height(self) -> int:
        return self.color.height

    @property
    def width(self) -> int:
        return self.color.width


def overlap_fraction(g: GuidanceImage) -> float:
    """Fraction of target pixels that received projected data."""
    return float(g.validity.mean())


def _splat_points(xyz: np.ndarray, colors: np.ndarray, k: Intrinsics, width: int, height: int) -> GuidanceImage:
    """Z-buffered nearest-pixel splatting; point order defines tie-breaking."""
    n = xyz.shape[0]
    out_color = np.zeros((height, width, 3), dtype=np.float32)
    out_depth = np.zeros((height, width), dtype=np.float32)
    out_valid = np.zeros((height, width), dtype=bool)
    if n == 0:
        return GuidanceImage(ImageBuffer(out_color), out_valid, out_depth)

    z = xyz[:, 2]
    front = z > 0.0
    zs = np.where(front, z, 1.0)
    uf = np.floor(k.fx * xyz[:, 0] / zs + k.cx + 0.5)
    vf = np.floor(k.fy * xyz[:, 1] / zs + k.cy + 0.5)
    keep = front & (uf >= 0) & (uf <= width - 1) & (vf >= 0) & (vf <= height - 1)
    if not keep.any():
        return GuidanceImage(ImageBuffer(out_color), out_valid, out_depth)

    idx = np.nonzero(keep)[0]
    pix = (vf[keep].astype(np.int64) * width + uf[keep].astype(np.int64))
    depth = z[keep]

    dmin = np.full(width * height, np.inf)
    np.minimum.at(dmin, pix, depth)
    tied = depth <= dmin[pix] + Z_TIE_TOLERANCE

    winner = np.full(width * height, n, dtype=np.int64)
    np.minimum.at(winner, pix[tied], idx[tied])

    hit = winner < n
    flat_color = out_color.reshape(-1, 3)
    flat_color[hit] = colors[winner[hit]]
    out_depth.reshape(-1)[hit] = z[winner[hit]]
    out_valid.reshape(-1)[hit] = True
    return GuidanceImage(ImageBuffer(out_color), out_valid, out_depth)


def forward_warp(src: ImageBuffer, src_depth: DepthMap, k: Intrinsics, rel: RelativePose) -> GuidanceImage:
    """Reproject a source image into the camera frame reached through ``rel``.

    Source pixels with invalid depth are skipped rather than splatted as
    zeros. Target pixels that receive no splat are invalid.
    """
    if (src.height, src.width) != (src_depth.height, src_depth.width):
        raise InvalidArgumentError("source image and depth dimensions differ")
    if (k.width, k.height) != (src.width, src.height):
        raise InvalidArgumentError("intrinsics do not match the source dimensions")

    h, w = src.height, src.width
    valid = src_depth.validity
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    d = src_depth.values.astype(np.float64)

    # Row-major flattening keeps source order deterministic for tie-breaks.
    sel = valid.reshape(-1)
    u = uu.reshape(-1)[sel]
    v = vv.reshape(-1)[sel]
    dz = d.reshape(-1)[sel]

    x = (u - k.cx) / k.fx * dz
    y = (v - k.cy) / k.fy * dz
    pts = np.stack([x, y, dz], axis=1)

    can = rel.canonical()
    pts = pts @ can.rotation.T + can.translation

    colors = src.values.reshape(-1, 3)[sel]
    return _splat_points(pts, colors, k, w, h)


def rasterize_splats(points, k: Intrinsics, width: int, height: int) -> GuidanceImage:
    """Splat explicit (3D point, color) pairs; list order defines tie-breaking.

    Behind-camera and out-of-bounds points are dropped silently.
    """
    if len(points) == 0:
        return _splat_points(np.zeros((0, 3)), np.zeros((0, 3), np.float32), k, width, height)
    xyz = np.asarray([p for p, _ in points], dtype=np.float64).reshape(-1, 3)
    colors = np.asarray([c for _, c in points], dtype=np.float32).reshape(-1, 3)
    return _splat_points(xyz, colors, k, width, height)
