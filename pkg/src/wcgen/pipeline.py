"""Two-stage trajectory generation.

Stage one walks the trajectory and synthesizes one reference view per
viewpoint: the first viewpoint from depth alone, every later viewpoint by
depth-warping the previous reference forward and regenerating on top of
the warp. When the warp leaves no usable overlap the step falls back to
the depth-only path. Stage two outpaints each viewpoint's remaining
views in traversal order, guided by rotation warps of already-finished
neighbors. Every synthesized image records the exact request that
produced it.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (
    DegenerateBearingError,
    InvalidArgumentError,
    NotFoundError,
    PipelineStepError,
    WcgenError,
)
from .geometry import DepthMap, ImageBuffer, Intrinsics, Pose, RelativePose
from .panorama import (
    ViewGrid,
    neighbor_set,
    traversal_queue,
    view_to_view_rotation,
    view_world_rotation,
)
from .trajwarp import forward_warp, overlap_fraction
from .viewwarp import blur_mask, merge_guidance, rotation_warp
from .backend.contracts import BackendSuite, GenerationRequest, Mode, image_digest

__all__ = [
    "Viewpoint",
    "Trajectory",
    "PipelineConfig",
    "RequestRecord",
    "GeneratedView",
    "GeneratedViewpoint",
    "GeneratedTrajectory",
    "select_reference_index",
    "view_pose",
    "view_seed",
    "initial_module",
    "forward_module",
    "replenish_module",
    "run_trajectory",
    "run_trajectories",
]


@dataclass(eq=False)
class Viewpoint:
    """One panorama station: n views, n depth maps, and a world position."""

    id: str
    position: np.ndarray
    views: list[ImageBuffer]
    depths: list[DepthMap | None]
    grid: ViewGrid
    intrinsics: Intrinsics

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        if self.position.shape != (3,) or not np.all(np.isfinite(self.position)):
            raise InvalidArgumentError("viewpoint position must be a finite 3-vector")
        if len(self.views) != self.grid.n or len(self.depths) != self.grid.n:
            raise InvalidArgumentError(
                f"viewpoint needs exactly {self.grid.n} views and depths, "
                f"got {len(self.views)}/{len(self.depths)}"
            )


def view_pose(position, i: int, grid: ViewGrid) -> Pose:
    """World pose of view i's camera at a viewpoint position."""
    return Pose(view_world_rotation(i, grid), np.asarray(position, dtype=np.float64))


def select_reference_index(pos_t, pos_next, grid: ViewGrid) -> int:
    """Horizontal-row view index facing from one viewpoint toward the next.

    The bearing is measured clockwise from the grid's zero heading and
    snapped to the nearest heading (ties round up).
    """
    a = np.asarray(pos_t, dtype=np.float64)
    b = np.asarray(pos_next, dtype=np.float64)
    dx, dy = float(b[0] - a[0]), float(b[1] - a[1])
    if math.hypot(dx, dy) < 0.01:
        raise DegenerateBearingError(
            f"viewpoints are vertically stacked (horizontal distance {math.hypot(dx, dy):.4f} m)"
        )
    bearing = math.degrees(math.atan2(dx, dy)) % 360.0
    idx = int(math.floor(bearing / grid.heading_step_deg + 0.5)) % grid.n_h
    return grid.n_h + idx


@dataclass(eq=False)
class Trajectory:
    """An ordered walk through scene viewpoints with per-step reference views."""

    id: str
    viewpoint_ids: list[str]
    reference_indices: list[int]
    relative_poses: list[RelativePose]

    def __post_init__(self):
        l = len(self.viewpoint_ids)
        if l < 2:
            raise InvalidArgumentError("a trajectory needs at least 2 viewpoints")
        if len(self.reference_indices) != l:
            raise InvalidArgumentError("need one reference index per viewpoint")
        if len(self.relative_poses) != l - 1:
            raise InvalidArgumentError("need one relative pose per consecutive step")

    @property
    def length(self) -> int:
        return len(self.viewpoint_ids)

    @classmethod
    def from_positions(
        cls,
        traj_id: str,
        viewpoint_ids: list[str],
        positions: dict[str, np.ndarray],
        grid: ViewGrid,
        reference_indices: list[int] | None = None,
    ) -> "Trajectory":
        """Derive reference views from geometry unless explicitly given.

        Each viewpoint faces the next one; the final viewpoint keeps the
        arrival direction of the last step.
        """
        l = len(viewpoint_ids)
        if l < 2:
            raise InvalidArgumentError("a trajectory needs at least 2 viewpoints")
        pos = [np.asarray(positions[v], dtype=np.float64) for v in viewpoint_ids]
        if reference_indices is None:
            refs = [select_reference_index(pos[t], pos[t + 1], grid) for t in range(l - 1)]
            refs.append(select_reference_index(pos[l - 2], pos[l - 1], grid))
        else:
            refs = list(reference_indices)
            if len(refs) != l:
                raise InvalidArgumentError("explicit reference indices must cover every viewpoint")
            for r in refs:
                grid.check_index(r)
        rels = [
            RelativePose.from_poses(
                source=view_pose(pos[t - 1], refs[t - 1], grid),
                target=view_pose(pos[t], refs[t], grid),
            )
            for t in range(1, l)
        ]
        return cls(traj_id, list(viewpoint_ids), refs, rels)


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs surfaced in run configuration files and CLI flags."""

    run_seed: int = 0
    min_overlap: float = 0.05
    strength_initial: float = 1.0
    strength_forward: float = 0.6
    strength_outpaint: float = 0.75
    blur_sigma: float | None = None  # None means 1% of image width
    warp_depth: str = "estimated"  # "estimated" | "dataset"
    conditioning_depth: str = "dataset"  # "dataset" (estimate when absent) | "estimated"
    workers: int = 1

    def __post_init__(self):
        if self.warp_depth not in ("estimated", "dataset"):
            raise InvalidArgumentError(f"unknown warp_depth {self.warp_depth!r}")
        if self.conditioning_depth not in ("dataset", "estimated"):
            raise InvalidArgumentError(f"unknown conditioning_depth {self.conditioning_depth!r}")
        if not (0.0 <= self.min_overlap <= 1.0):
            raise InvalidArgumentError("min_overlap must lie in [0, 1]")
        if self.workers < 1:
            raise InvalidArgumentError("workers must be positive")

    def sigma_for(self, width: int) -> float:
        return 0.01 * width if self.blur_sigma is None else self.blur_sigma

    def to_json(self) -> dict:
        body = asdict(self)
        # execution-only; identical runs at different worker counts must
        # produce identical provenance
        body.pop("workers")
        return body


def view_seed(run_seed: int, viewpoint_id: str, index: int) -> int:
    """Per-image seed: stable hash of the run seed, viewpoint, and view index."""
    digest = hashlib.sha256(f"{run_seed}|{viewpoint_id}|{index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class RequestRecord:
    """Provenance of one generation call, without the bulky pixel payloads."""

    mode: str
    prompt: str
    strength: float
    seed: int
    depth_digest: str | None = None
    init_digest: str | None = None
    mask_digest: str | None = None

    @classmethod
    def from_request(cls, req: GenerationRequest) -> "RequestRecord":
        def mask_digest(m):
            q = np.round(np.asarray(m, dtype=np.float64) * 255.0).astype(np.uint8)
            return hashlib.sha256(q.tobytes()).hexdigest()

        return cls(
            mode=req.mode.value,
            prompt=req.prompt,
            strength=req.strength,
            seed=req.seed,
            depth_digest=(
                hashlib.sha256(req.depth.values.tobytes() + req.depth.validity.tobytes()).hexdigest()
                if req.depth is not None
                else None
            ),
            init_digest=image_digest(req.init_image) if req.init_image is not None else None,
            mask_digest=mask_digest(req.mask) if req.mask is not None else None,
        )

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class GeneratedView:
    index: int
    image: ImageBuffer
    prompt: str
    backend_id: str
    seed: int
    request: RequestRecord


@dataclass(eq=False)
class GeneratedViewpoint:
    viewpoint_id: str
    reference_index: int
    fallback: bool
    overlap: float | None
    views: list[GeneratedView]


@dataclass(eq=False)
class GeneratedTrajectory:
    trajectory_id: str
    scene_id: str
    config: dict
    viewpoints: list[GeneratedViewpoint] = field(default_factory=list)
    status: str = "complete"
    failure: dict | None = None

    def mode_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {m.value: 0 for m in Mode}
        for vp in self.viewpoints:
            for view in vp.views:
                counts[view.request.mode] += 1
        return counts

    def fallback_count(self) -> int:
        return sum(1 for vp in self.viewpoints if vp.fallback)


def _conditioning_depth(vp: Viewpoint, r: int, suite: BackendSuite, cfg: PipelineConfig) -> DepthMap:
    if cfg.conditioning_depth == "dataset" and vp.depths[r] is not None:
        return vp.depths[r]
    return suite.depth.estimate_depth(vp.views[r])


def initial_module(vp: Viewpoint, r: int, suite: BackendSuite, cfg: PipelineConfig, *, seed: int) -> GeneratedView:
    """Depth-conditioned synthesis of a reference view from the real observation."""
    vp.grid.check_index(r)
    depth = vp.depths[r]
    if depth is None:
        raise InvalidArgumentError(f"viewpoint {vp.id!r} has no depth for view {r}")
    prompt = suite.captioner.caption(vp.views[r])
    req = GenerationRequest(Mode.DEPTH_TO_IMAGE, prompt=prompt, depth=depth, strength=cfg.strength_initial, seed=seed)
    resp = suite.generator.generate(req)
    return GeneratedView(r, resp.image, prompt, resp.backend_id, resp.seed_used, RequestRecord.from_request(req))


def forward_module(
    prev_y: ImageBuffer,
    vp: Viewpoint,
    r: int,
    rel: RelativePose,
    suite: BackendSuite,
    cfg: PipelineConfig,
    *,
    seed: int,
    prev_dataset_depth: DepthMap | None = None,
) -> tuple[GeneratedView, bool, float]:
    """Warp the previous reference forward and regenerate on top of it.

    Returns the generated view, whether the depth-only fallback ran, and
    the warp's overlap fraction. The fallback runs when the warped
    guidance covers less than ``cfg.min_overlap`` of the frame.
    """
    vp.grid.check_index(r)
    if cfg.warp_depth == "dataset" and prev_dataset_depth is not None:
        warp_depth = prev_dataset_depth
    else:
        warp_depth = suite.depth.estimate_depth(prev_y)
    guidance = forward_warp(prev_y, warp_depth, vp.intrinsics, rel)
    overlap = overlap_fraction(guidance)
    prompt = suite.captioner.caption(vp.views[r])
    cond_depth = _conditioning_depth(vp, r, suite, cfg)

    if overlap >= cfg.min_overlap:
        req = GenerationRequest(
            Mode.IMAGE_TO_IMAGE,
            prompt=prompt,
            depth=cond_depth,
            init_image=guidance.color,
            mask=guidance.validity.astype(np.float32),
            strength=cfg.strength_forward,
            seed=seed,
        )
        fallback = False
    else:
        # Nothing carried over; start this viewpoint fresh from depth.
        req = GenerationRequest(
            Mode.DEPTH_TO_IMAGE, prompt=prompt, depth=cond_depth, strength=cfg.strength_initial, seed=seed
        )
        fallback = True
    resp = suite.generator.generate(req)
    view = GeneratedView(r, resp.image, prompt, resp.backend_id, resp.seed_used, RequestRecord.from_request(req))
    return view, fallback, overlap


def replenish_module(
    vp: Viewpoint,
    r: int,
    y_ref: ImageBuffer,
    suite: BackendSuite,
    cfg: PipelineConfig,
    *,
    run_seed: int,
) -> list[GeneratedView]:
    """Outpaint the remaining views of a viewpoint in traversal order.

    Each target view merges rotation warps of its already-generated
    neighbors into a guidance image, blurs the known-region mask, and
    outpaints the holes. Returns one record per non-reference view.
    """
    vp.grid.check_index(r)
    k = vp.intrinsics
    sigma = cfg.sigma_for(k.width)
    synthesized: dict[int, ImageBuffer] = {r: y_ref}
    out: list[GeneratedView] = []
    for i in traversal_queue(r, vp.grid).order:
        neighbors = neighbor_set(i, set(synthesized), r, vp.grid)
        warped = [
            rotation_warp(synthesized[j], k, view_to_view_rotation(j, i, vp.grid))
            for j in sorted(neighbors.members)
        ]
        merged, hole = merge_guidance(warped)
        known = blur_mask(~hole, sigma)
        prompt = suite.captioner.caption(vp.views[i])
        req = GenerationRequest(
            Mode.OUTPAINT,
            prompt=prompt,
            depth=_conditioning_depth(vp, i, suite, cfg),
            init_image=merged.color,
            mask=known,
            strength=cfg.strength_outpaint,
            seed=view_seed(run_seed, vp.id, i),
        )
        resp = suite.generator.generate(req)
        synthesized[i] = resp.image
        out.append(
            GeneratedView(i, resp.image, prompt, resp.backend_id, resp.seed_used, RequestRecord.from_request(req))
        )
    return out


def run_trajectory(
    traj: Trajectory,
    scene: dict[str, Viewpoint],
    suite: BackendSuite,
    cfg: PipelineConfig,
    scene_id: str = "",
) -> GeneratedTrajectory:
    """Run both stages over a trajectory with full provenance.

    All viewpoint ids are resolved before any generation. A failing step
    raises PipelineStepError carrying the partial, failure-labeled result.
    """
    missing = [v for v in traj.viewpoint_ids if v not in scene]
    if missing:
        raise NotFoundError(f"trajectory references unknown viewpoints: {missing}")
    vps = [scene[v] for v in traj.viewpoint_ids]

    result = GeneratedTrajectory(traj.id, scene_id, cfg.to_json())
    references: list[GeneratedView] = []
    meta: list[tuple[bool, float | None]] = []

    def fail(stage: str, step: int, vp_id: str, exc: BaseException):
        result.status = "failed"
        result.failure = {"stage": stage, "step": step, "viewpoint_id": vp_id, "error": str(exc)}
        raise PipelineStepError(stage, step, vp_id, exc, partial=result) from exc

    for t, vp in enumerate(vps):
        r = traj.reference_indices[t]
        seed = view_seed(cfg.run_seed, vp.id, r)
        try:
            if t == 0:
                view = initial_module(vp, r, suite, cfg, seed=seed)
                fallback, overlap = False, None
            else:
                prev_vp = vps[t - 1]
                prev_r = traj.reference_indices[t - 1]
                view, fallback, overlap = forward_module(
                    references[t - 1].image,
                    vp,
                    r,
                    traj.relative_poses[t - 1],
                    suite,
                    cfg,
                    seed=seed,
                    prev_dataset_depth=prev_vp.depths[prev_r],
                )
        except WcgenError as exc:
            fail("trajectory", t, vp.id, exc)
        references.append(view)
        meta.append((fallback, overlap))

    for t, vp in enumerate(vps):
        r = traj.reference_indices[t]
        try:
            others = replenish_module(vp, r, references[t].image, suite, cfg, run_seed=cfg.run_seed)
        except WcgenError as exc:
            fail("viewpoint", t, vp.id, exc)
        by_index = {view.index: view for view in others}
        by_index[r] = references[t]
        fallback, overlap = meta[t]
        result.viewpoints.append(
            GeneratedViewpoint(
                viewpoint_id=vp.id,
                reference_index=r,
                fallback=fallback,
                overlap=overlap,
                views=[by_index[i] for i in range(vp.grid.n)],
            )
        )
    return result


def run_trajectories(
    trajs: list[Trajectory],
    scene: dict[str, Viewpoint],
    suite: BackendSuite,
    cfg: PipelineConfig,
    scene_id: str = "",
) -> list[GeneratedTrajectory | PipelineStepError]:
    """Run independent trajectories, in parallel up to ``cfg.workers``.

    Results keep input order; a failed trajectory yields its
    PipelineStepError (with partial results attached) in place.
    """

    def one(traj: Trajectory):
        try:
            return run_trajectory(traj, scene, suite, cfg, scene_id)
        except PipelineStepError as exc:
            return exc

    if cfg.workers == 1 or len(trajs) <= 1:
        return [one(t) for t in trajs]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(one, trajs))
