"""Scene and trajectory manifests, PNG codecs, dataset output, synthetic scenes.

Manifests are JSON with manifest-relative paths. Depth is stored as
16-bit grayscale PNG at ``depth_scale`` units per meter, zero marking an
invalid pixel. The synthetic scene generator ray-casts an axis-aligned
textured room box and is the analytic oracle behind most geometry tests.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumError, InvalidArgumentError, LoadError, NotFoundError
from .geometry import DepthMap, ImageBuffer, Intrinsics, intrinsics_from_fov
from .panorama import ViewGrid, view_world_rotation
from .pipeline import GeneratedTrajectory, Trajectory, Viewpoint
from .backend import protocol
from .backend.contracts import WIRE_DEPTH_SCALE

__all__ = [
    "SyntheticSceneSpec",
    "RoomRenderer",
    "Scene",
    "TrajectoryManifest",
    "synth_scene",
    "save_scene",
    "load_scene",
    "load_trajectory_manifest",
    "save_trajectory_manifest",
    "trajectory_from_manifest",
    "write_dataset",
    "verify_dataset",
]

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """An axis-aligned room box with procedurally textured walls.

    Viewpoints must sit strictly inside the room. World frame: z up,
    the room spans [0, w] x [0, d] x [0, h].
    """

    room: tuple[float, float, float] = (8.0, 6.0, 3.0)
    viewpoint_positions: tuple[tuple[float, float, float], ...] = ((4.0, 2.0, 1.5), (4.0, 3.0, 1.5))
    image_size: int = 128
    vertical_fov_deg: float = 60.0
    grid_n_h: int = 12
    scene_id: str = "synthetic-room"

    def __post_init__(self):
        if any(d <= 0 for d in self.room):
            raise InvalidArgumentError("room dimensions must be positive")
        if not self.viewpoint_positions:
            raise InvalidArgumentError("need at least one viewpoint")
        for p in self.viewpoint_positions:
            if not all(0.01 < c < dim - 0.01 for c, dim in zip(p, self.room)):
                raise InvalidArgumentError(f"viewpoint {p} is not strictly inside the room {self.room}")
        if self.image_size < 8:
            raise InvalidArgumentError("image size too small")

    def grid(self) -> ViewGrid:
        return ViewGrid(n_h=self.grid_n_h)

    def intrinsics(self) -> Intrinsics:
        return intrinsics_from_fov(self.image_size, self.image_size, self.vertical_fov_deg)

    def to_json(self) -> dict:
        return {
            "room": list(self.room),
            "viewpoint_positions": [list(p) for p in self.viewpoint_positions],
            "image_size": self.image_size,
            "vertical_fov_deg": self.vertical_fov_deg,
            "grid_n_h": self.grid_n_h,
            "scene_id": self.scene_id,
        }

    @classmethod
    def from_json(cls, body: dict) -> "SyntheticSceneSpec":
        try:
            return cls(
                room=tuple(body["room"]),
                viewpoint_positions=tuple(tuple(p) for p in body["viewpoint_positions"]),
                image_size=int(body.get("image_size", 128)),
                vertical_fov_deg=float(body.get("vertical_fov_deg", 60.0)),
                grid_n_h=int(body.get("grid_n_h", 12)),
                scene_id=str(body.get("scene_id", "synthetic-room")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"malformed synthetic scene spec: {exc}") from exc


class RoomRenderer:
    """Per-pixel ray-caster against the room box with smooth wall textures.

    Textures are low-frequency sinusoids so resampled views agree to well
    under one gray level; depth is the exact analytic hit distance.
    """

    def __init__(self, spec: SyntheticSceneSpec, seed: int):
        self.spec = spec
        rng = np.random.default_rng(seed)
        hues = rng.permutation(6)
        self._base = np.empty((6, 3))
        self._amp = np.empty((6, 3))
        self._freq = np.empty((6, 2))
        self._phase = np.empty((6, 3, 2))
        for f in range(6):
            anchor = np.roll(np.array([0.62, 0.45, 0.3]), hues[f] % 3)
            self._base[f] = np.clip(anchor + rng.uniform(-0.08, 0.08, 3), 0.15, 0.85)
            self._amp[f] = rng.uniform(0.04, 0.09, 3)
            self._freq[f] = rng.uniform(0.15, 0.45, 2)
            self._phase[f] = rng.uniform(0.0, 1.0, (3, 2))

    def trace(self, origin, dirs) -> tuple[np.ndarray, np.ndarray]:
        """Cast rays from an interior point; returns (ray parameter, color).

        ``dirs`` is (..., 3) in world coordinates (any scale); the hit
        point is origin + s * dir.
        """
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64)
        lims = np.asarray(self.spec.room, dtype=np.float64)
        shape = d.shape[:-1]
        s = np.full(shape, np.inf)
        face = np.full(shape, -1, dtype=np.int8)
        for axis in range(3):
            da = d[..., axis]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_hi = np.where(da > 0, (lims[axis] - o[axis]) / da, np.inf)
                t_lo = np.where(da < 0, (0.0 - o[axis]) / da, np.inf)
            hit_hi = t_hi < s
            s = np.where(hit_hi, t_hi, s)
            face = np.where(hit_hi, 2 * axis + 1, face)
            hit_lo = t_lo < s
            s = np.where(hit_lo, t_lo, s)
            face = np.where(hit_lo, 2 * axis, face)
        hit = o + s[..., None] * d
        colors = np.empty(shape + (3,), dtype=np.float64)
        uv_axes = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
        for f in range(6):
            m = face == f
            if not m.any():
                continue
            a_ax, b_ax = uv_axes[f // 2]
            a = hit[m][:, a_ax]
            b = hit[m][:, b_ax]
            base = self._base[f]
            amp = self._amp[f]
            fa, fb = self._freq[f]
            wave = np.sin(2 * np.pi * (fa * a[:, None] + self._phase[f][:, 0])) * np.sin(
                2 * np.pi * (fb * b[:, None] + self._phase[f][:, 1])
            )
            colors[m] = np.clip(base + amp * wave, 0.02, 0.98)
        return s, colors

    def render_view(self, position, view_index: int, grid: ViewGrid, k: Intrinsics) -> tuple[ImageBuffer, DepthMap]:
        """Render one grid perspective; depth is the camera z coordinate."""
        uu, vv = np.meshgrid(np.arange(k.width, dtype=np.float64), np.arange(k.height, dtype=np.float64))
        dirs_cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)
        rot = view_world_rotation(view_index, grid)
        dirs_world = dirs_cam @ rot.T
        s, colors = self.trace(position, dirs_world)
        # With z-normalized camera rays, the ray parameter equals planar depth.
        depth = DepthMap(s.astype(np.float32), np.isfinite(s) & (s > 0))
        img = ImageBuffer(colors.astype(np.float32)).quantized()
        return img, depth

    def render_viewpoint(self, vp_id: str, position, grid: ViewGrid, k: Intrinsics) -> Viewpoint:
        views, depths = [], []
        for i in range(grid.n):
            img, depth = self.render_view(position, i, grid, k)
            views.append(img)
            depths.append(depth)
        return Viewpoint(vp_id, np.asarray(position, dtype=np.float64), views, depths, grid, k)


# ---------------------------------------------------------------------------
# Scenes


@dataclass(eq=False)
class Scene:
    """A set of viewpoints with shared grid and intrinsics, loaded lazily."""

    scene_id: str
    grid: ViewGrid
    intrinsics: Intrinsics
    depth_scale: int
    positions: dict[str, np.ndarray]
    _loader: object = None
    _cache: dict = field(default_factory=dict)

    def viewpoint_ids(self) -> list[str]:
        return list(self.positions)

    def viewpoint(self, vp_id: str) -> Viewpoint:
        if vp_id not in self.positions:
            raise NotFoundError(f"unknown viewpoint id {vp_id!r}")
        if vp_id not in self._cache:
            self._cache[vp_id] = self._loader(vp_id)
        return self._cache[vp_id]

    def viewpoints(self) -> dict[str, Viewpoint]:
        return {v: self.viewpoint(v) for v in self.positions}


def synth_scene(spec: SyntheticSceneSpec, seed: int) -> Scene:
    """Deterministically render a synthetic scene into an in-memory Scene."""
    renderer = RoomRenderer(spec, seed)
    grid = spec.grid()
    k = spec.intrinsics()
    ids = [f"vp{idx:02d}" for idx in range(len(spec.viewpoint_positions))]
    positions = {
        vid: np.asarray(p, dtype=np.float64) for vid, p in zip(ids, spec.viewpoint_positions)
    }
    scene = Scene(
        scene_id=spec.scene_id,
        grid=grid,
        intrinsics=k,
        depth_scale=WIRE_DEPTH_SCALE,
        positions=positions,
        _loader=lambda vid: renderer.render_viewpoint(vid, positions[vid], grid, k),
    )
    scene.renderer = renderer
    return scene


# ---------------------------------------------------------------------------
# Manifest I/O


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise LoadError(f"no such file: {path}")
    try:
        return json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"malformed JSON in {path}: {exc}") from exc


def _intrinsics_to_json(k: Intrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height}


def _intrinsics_from_json(body: dict) -> Intrinsics:
    try:
        return Intrinsics(
            fx=float(body["fx"]),
            fy=float(body["fy"]),
            cx=float(body["cx"]),
            cy=float(body["cy"]),
            width=int(body["width"]),
            height=int(body["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"malformed intrinsics: {exc}") from exc


def save_scene(scene: Scene, out_dir) -> Path:
    """Write every viewpoint's images and depths plus a scene manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for vp_id in scene.viewpoint_ids():
        vp = scene.viewpoint(vp_id)
        vp_dir = out / vp_id
        vp_dir.mkdir(parents=True, exist_ok=True)
        views, depths = [], []
        for i in range(scene.grid.n):
            view_rel = f"{vp_id}/view_{i:02d}.png"
            depth_rel = f"{vp_id}/depth_{i:02d}.png"
            (out / view_rel).write_bytes(protocol.encode_image_png(vp.views[i]))
            (out / depth_rel).write_bytes(protocol.encode_depth_png(vp.depths[i], scene.depth_scale))
            views.append(view_rel)
            depths.append(depth_rel)
        entries.append(
            {
                "id": vp_id,
                "position": [float(c) for c in scene.positions[vp_id]],
                "views": views,
                "depths": depths,
            }
        )
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "grid": {
            "n_h": scene.grid.n_h,
            "elevations_deg": list(scene.grid.elevations_deg),
            "heading_step_deg": scene.grid.heading_step_deg,
        },
        "intrinsics": _intrinsics_to_json(scene.intrinsics),
        "depth_scale": scene.depth_scale,
        "viewpoints": entries,
    }
    path = out / "scene.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", "utf-8")
    return path


def load_scene(path) -> Scene:
    """Load a scene manifest; viewpoint pixels load lazily on first access."""
    manifest_path = Path(path)
    body = _read_json(manifest_path)
    root = manifest_path.parent
    try:
        grid_body = body["grid"]
        grid = ViewGrid(
            n_h=int(grid_body["n_h"]),
            elevations_deg=tuple(grid_body.get("elevations_deg", (-30.0, 0.0, 30.0))),
            heading_step_deg=grid_body.get("heading_step_deg"),
        )
        k = _intrinsics_from_json(body["intrinsics"])
        depth_scale = int(body.get("depth_scale", WIRE_DEPTH_SCALE))
        entries = body["viewpoints"]
        scene_id = str(body.get("scene_id", manifest_path.stem))
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"malformed scene manifest {manifest_path}: {exc}") from exc
    if depth_scale <= 0:
        raise LoadError("depth_scale must be positive")

    positions: dict[str, np.ndarray] = {}
    files: dict[str, tuple[list[Path], list[Path]]] = {}
    for entry in entries:
        try:
            vp_id = str(entry["id"])
            pos = np.asarray(entry["position"], dtype=np.float64)
            views = [root / p for p in entry["views"]]
            depths = [root / p for p in entry["depths"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"malformed viewpoint entry: {exc}") from exc
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise LoadError(f"viewpoint {vp_id!r} position must be a finite 3-vector")
        if len(views) != grid.n or len(depths) != grid.n:
            raise LoadError(f"viewpoint {vp_id!r} must reference exactly {grid.n} views and depths")
        for f in views + depths:
            if not f.exists():
                raise LoadError(f"referenced file missing: {f}")
        positions[vp_id] = pos
        files[vp_id] = (views, depths)

    def load_viewpoint(vp_id: str) -> Viewpoint:
        views_paths, depth_paths = files[vp_id]
        views, depths = [], []
        for vp_path, d_path in zip(views_paths, depth_paths):
            try:
                img = protocol.decode_image_png(vp_path.read_bytes())
                depth = protocol.decode_depth_png(d_path.read_bytes(), depth_scale)
            except Exception as exc:
                raise LoadError(f"cannot decode {vp_path} / {d_path}: {exc}") from exc
            if (img.width, img.height) != (k.width, k.height):
                raise LoadError(f"{vp_path} is {img.width}x{img.height}, manifest says {k.width}x{k.height}")
            if (depth.width, depth.height) != (k.width, k.height):
                raise LoadError(f"{d_path} dimensions disagree with the manifest intrinsics")
            views.append(img)
            depths.append(depth)
        return Viewpoint(vp_id, positions[vp_id], views, depths, grid, k)

    return Scene(
        scene_id=scene_id,
        grid=grid,
        intrinsics=k,
        depth_scale=depth_scale,
        positions=positions,
        _loader=load_viewpoint,
    )


@dataclass(frozen=True)
class TrajectoryManifest:
    trajectory_id: str
    scene_id: str
    viewpoint_ids: tuple[str, ...]
    reference_indices: tuple[int, ...] | None = None
    instruction: str | None = None

    def __post_init__(self):
        if len(self.viewpoint_ids) < 2:
            raise InvalidArgumentError("a trajectory needs at least 2 viewpoints")
        if self.reference_indices is not None and len(self.reference_indices) != len(self.viewpoint_ids):
            raise InvalidArgumentError("reference indices must cover every viewpoint")

    def to_json(self) -> dict:
        body = {
            "schema_version": SCHEMA_VERSION,
            "trajectory_id": self.trajectory_id,
            "scene_id": self.scene_id,
            "viewpoints": list(self.viewpoint_ids),
        }
        if self.reference_indices is not None:
            body["reference_indices"] = list(self.reference_indices)
        if self.instruction is not None:
            body["instruction"] = self.instruction
        return body


def save_trajectory_manifest(manifest: TrajectoryManifest, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(manifest.to_json(), indent=2) + "\n", "utf-8")
    return p


def load_trajectory_manifest(path) -> TrajectoryManifest:
    body = _read_json(Path(path))
    try:
        refs = body.get("reference_indices")
        return TrajectoryManifest(
            trajectory_id=str(body["trajectory_id"]),
            scene_id=str(body.get("scene_id", "")),
            viewpoint_ids=tuple(str(v) for v in body["viewpoints"]),
            reference_indices=tuple(int(r) for r in refs) if refs is not None else None,
            instruction=body.get("instruction"),
        )
    except (KeyError, TypeError, ValueError, InvalidArgumentError) as exc:
        raise LoadError(f"malformed trajectory manifest {path}: {exc}") from exc


def trajectory_from_manifest(manifest: TrajectoryManifest, scene: Scene) -> Trajectory:
    missing = [v for v in manifest.viewpoint_ids if v not in scene.positions]
    if missing:
        raise NotFoundError(f"trajectory references unknown viewpoints: {missing}")
    return Trajectory.from_positions(
        manifest.trajectory_id,
        list(manifest.viewpoint_ids),
        scene.positions,
        scene.grid,
        list(manifest.reference_indices) if manifest.reference_indices is not None else None,
    )


# ---------------------------------------------------------------------------
# Generated dataset output


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_dataset(gen: GeneratedTrajectory, out_dir) -> Path:
    """Write synthesized views plus a versioned provenance manifest.

    Layout: out_dir/<trajectory id>/<viewpoint id>/view_<i>.png with
    generation.json alongside. Writing is deterministic, so overwriting
    an identical run leaves identical bytes.
    """
    root = Path(out_dir) / gen.trajectory_id
    root.mkdir(parents=True, exist_ok=True)
    vp_entries = []
    for vp in gen.viewpoints:
        vp_dir = root / vp.viewpoint_id
        vp_dir.mkdir(parents=True, exist_ok=True)
        view_entries = []
        for view in vp.views:
            data = protocol.encode_image_png(view.image)
            rel = f"{vp.viewpoint_id}/view_{view.index:02d}.png"
            (root / rel).write_bytes(data)
            view_entries.append(
                {
                    "index": view.index,
                    "file": rel,
                    "sha256": _sha256(data),
                    "prompt": view.prompt,
                    "backend_id": view.backend_id,
                    "seed": view.seed,
                    "request": view.request.to_json(),
                }
            )
        vp_entries.append(
            {
                "id": vp.viewpoint_id,
                "reference_index": vp.reference_index,
                "fallback": vp.fallback,
                "overlap": vp.overlap,
                "views": view_entries,
            }
        )
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "trajectory_id": gen.trajectory_id,
        "scene_id": gen.scene_id,
        "status": gen.status,
        "failure": gen.failure,
        "config": gen.config,
        "viewpoints": vp_entries,
    }
    path = root / "generation.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
    return path


def verify_dataset(traj_dir) -> dict:
    """Re-hash every stored image against the manifest; raises on mismatch."""
    root = Path(traj_dir)
    manifest = _read_json(root / "generation.json")
    checked = 0
    for vp in manifest.get("viewpoints", []):
        for view in vp.get("views", []):
            f = root / view["file"]
            if not f.exists():
                raise ChecksumError(f"missing file {f}")
            if _sha256(f.read_bytes()) != view["sha256"]:
                raise ChecksumError(f"checksum mismatch for {f}")
            checked += 1
    return {"files": checked, "status": manifest.get("status")}
