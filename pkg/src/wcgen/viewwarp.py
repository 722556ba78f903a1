"""Rotation-only warps between perspectives sharing a camera center.

Pure rotations are bijective on the viewing sphere, so these warps use
inverse mapping with bilinear sampling: each target pixel's ray is
rotated back into the source frame and sampled there if it lands inside
the source frustum. This is hole-free and carries the same validity
semantics as forward rasterization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgumentError
from .geometry import ImageBuffer, Intrinsics, check_rotation
from .trajwarp import GuidanceImage

__all__ = ["BlurredMask", "rotation_warp", "binarize_mask", "blur_mask", "merge_guidance", "BOUNDS_EPS"]

# Inclusive frustum-bounds slack in pixels; absorbs float round-off so an
# exact self-warp keeps every border pixel valid.
BOUNDS_EPS = 1e-6

# Blur kernels are truncated at three standard deviations, so blurred
# masks match the binary mask exactly outside a 3-sigma band.
_BLUR_TRUNCATE = 3.0


@dataclass(eq=False)
class BlurredMask:
    """Per-pixel keep weights in [0, 1]; 1 marks known content."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise InvalidArgumentError(f"mask must have shape (H, W), got {v.shape}")
        if not np.all(np.isfinite(v)) or float(v.min()) < 0.0 or float(v.max()) > 1.0:
            raise InvalidArgumentError("mask weights must lie in [0, 1]")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def rotation_warp(src: ImageBuffer, k: Intrinsics, r_view, r_extrinsic=None) -> GuidanceImage:
    """Resample a source view into a target orientation about the same center.

    ``r_view`` takes source-frame directions into the target frame;
    ``r_extrinsic`` (default identity) is applied first. Target pixels
    whose rays leave the source frustum are invalid.
    """
    if (k.width, k.height) != (src.width, src.height):
        raise InvalidArgumentError("intrinsics do not match the source dimensions")
    rv = check_rotation(r_view, "r_view")
    re = np.eye(3) if r_extrinsic is None else check_rotation(r_extrinsic, "r_extrinsic")
    rot = rv @ re

    h, w = src.height, src.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)

    # Inverse mapping: target ray expressed in the source frame.
    s = dirs @ rot  # row-vector convention: equals rot.T applied to each ray
    sz = s[..., 2]
    front = sz > 0.0
    safe_z = np.where(front, sz, 1.0)
    su = k.fx * s[..., 0] / safe_z + k.cx
    sv = k.fy * s[..., 1] / safe_z + k.cy

    valid = (
        front
        & (su >= -BOUNDS_EPS)
        & (su <= w - 1 + BOUNDS_EPS)
        & (sv >= -BOUNDS_EPS)
        & (sv <= h - 1 + BOUNDS_EPS)
    )

    # snap float round-off so an exact self-warp samples pixel centers exactly
    su_round = np.round(su)
    sv_round = np.round(sv)
    su = np.where(np.abs(su - su_round) < 1e-9, su_round, su)
    sv = np.where(np.abs(sv - sv_round) < 1e-9, sv_round, sv)
    su = np.clip(su, 0.0, w - 1.0)
    sv = np.clip(sv, 0.0, h - 1.0)
    u0 = np.minimum(su.astype(np.int64), w - 2) if w > 1 else np.zeros_like(su, dtype=np.int64)
    v0 = np.minimum(sv.astype(np.int64), h - 2) if h > 1 else np.zeros_like(sv, dtype=np.int64)
    fu = su - u0
    fv = sv - v0

    img = src.values.astype(np.float64)
    c00 = img[v0, u0]
    c01 = img[v0, u0 + 1] if w > 1 else c00
    c10 = img[v0 + 1, u0] if h > 1 else c00
    c11 = img[v0 + 1, u0 + 1] if (w > 1 and h > 1) else c00
    fu3 = fu[..., None]
    fv3 = fv[..., None]
    sampled = (
        c00 * (1.0 - fu3) * (1.0 - fv3)
        + c01 * fu3 * (1.0 - fv3)
        + c10 * (1.0 - fu3) * fv3
        + c11 * fu3 * fv3
    )
    out = np.where(valid[..., None], sampled, 0.0).astype(np.float32)
    return GuidanceImage(ImageBuffer(np.clip(out, 0.0, 1.0)), valid)


def binarize_mask(g: GuidanceImage) -> np.ndarray:
    """Binary known-content mask: true exactly where the guidance is valid."""
    return g.validity.copy()


def blur_mask(mask, sigma: float) -> BlurredMask:
    """Soften mask edges with a Gaussian of the given pixel sigma.

    Values farther than three sigmas from any edge are untouched;
    sigma 0 returns the mask unchanged.
    """
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be non-negative, got {sigma}")
    m = np.asarray(mask)
    if m.dtype == bool:
        m = m.astype(np.float64)
    else:
        m = m.astype(np.float64)
        if m.size and (float(m.min()) < 0.0 or float(m.max()) > 1.0):
            raise InvalidArgumentError("mask values must lie in [0, 1]")
    if m.ndim != 2:
        raise InvalidArgumentError(f"mask must have shape (H, W), got {m.shape}")
    if sigma == 0:
        return BlurredMask(m.astype(np.float32))
    blurred = gaussian_filter(m, sigma=sigma, mode="reflect", truncate=_BLUR_TRUNCATE)
    return BlurredMask(np.clip(blurred, 0.0, 1.0).astype(np.float32))


def merge_guidance(items) -> tuple[GuidanceImage, np.ndarray]:
    """Merge several guidance images by validity-weighted averaging.

    ``items`` holds GuidanceImages or (GuidanceImage, validity) pairs; a
    pair overrides the image's own validity. Returns the merged guidance
    and the remaining-hole mask (true where no input had data). Overlaps
    are normalized, so merged colors stay inside the per-pixel convex
    hull of the inputs; a single item merges to itself.
    """
    normalized: list[tuple[GuidanceImage, np.ndarray]] = []
    for item in items:
        if isinstance(item, GuidanceImage):
            normalized.append((item, item.validity))
        else:
            g, v = item
            normalized.append((g, np.asarray(v, dtype=bool)))
    if not normalized:
        raise InvalidArgumentError("merge_guidance requires at least one guidance image")

    h, w = normalized[0][0].height, normalized[0][0].width
    acc = np.zeros((h, w, 3), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.int64)
    for g, v in normalized:
        if (g.height, g.width) != (h, w) or v.shape != (h, w):
            raise InvalidArgumentError("all guidance images must share dimensions")
        acc += g.color.values.astype(np.float64) * v[..., None]
        count += v

    merged = acc / np.maximum(count, 1)[..., None]
    hole = count == 0
    out = GuidanceImage(ImageBuffer(np.clip(merged, 0.0, 1.0).astype(np.float32)), ~hole)
    return out, hole
