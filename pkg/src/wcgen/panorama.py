"""The discretized panorama: view grid, outpainting order, assembly, metrics.

A viewpoint's panorama is discretized into ``3 * n_h`` perspective views
arranged in three elevation rows (downward, horizontal, upward). Index
layout: row 0 occupies [0, n_h), row 1 [n_h, 2*n_h), row 2 [2*n_h, 3*n_h).
Headings step clockwise; horizontal index ``n_h`` faces yaw 0, pitch 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .geometry import DepthMap, ImageBuffer, Intrinsics, RelativePose, pitch_matrix, yaw_matrix
from .trajwarp import forward_warp
from .viewwarp import rotation_warp

__all__ = [
    "ViewGrid",
    "DEFAULT_GRID",
    "TraversalQueue",
    "NeighborSet",
    "WORLD_FROM_VIEW0",
    "grid_rotation",
    "view_to_view_rotation",
    "view_world_rotation",
    "traversal_queue",
    "grid_adjacent",
    "neighbor_set",
    "assemble_equirect",
    "equirect_coverage",
    "SeamEdge",
    "SeamReport",
    "seam_error",
    "ConsistencyReport",
    "trajectory_consistency",
]

# World orientation of the grid's zero view (heading 0, elevation 0):
# camera right = world +x, camera down = world -z, camera forward = world +y.
WORLD_FROM_VIEW0 = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class ViewGrid:
    """Panorama discretization: three elevation rows of n_h headings each.

    The heading step defaults to 360/n_h so the clockwise loop closes.
    """

    n_h: int = 12
    elevations_deg: tuple[float, float, float] = (-30.0, 0.0, 30.0)
    heading_step_deg: float | None = None

    def __post_init__(self):
        if self.n_h < 2:
            raise InvalidArgumentError("grid needs at least 2 headings per row")
        if len(self.elevations_deg) != 3:
            raise InvalidArgumentError("grid must have exactly 3 elevation rows")
        step = 360.0 / self.n_h if self.heading_step_deg is None else float(self.heading_step_deg)
        if abs(step * self.n_h - 360.0) > 1e-9:
            raise InvalidArgumentError(
                f"heading step {step} does not close the loop for n_h={self.n_h}"
            )
        object.__setattr__(self, "heading_step_deg", step)

    @property
    def n(self) -> int:
        return 3 * self.n_h

    def row(self, i: int) -> int:
        self.check_index(i)
        return i // self.n_h

    def col(self, i: int) -> int:
        self.check_index(i)
        return i % self.n_h

    def check_index(self, i: int) -> None:
        if not (0 <= i < self.n):
            raise InvalidArgumentError(f"view index {i} out of range [0, {self.n})")

    def heading_deg(self, i: int) -> float:
        return self.col(i) * self.heading_step_deg

    def elevation_deg(self, i: int) -> float:
        return self.elevations_deg[self.row(i)]


DEFAULT_GRID = ViewGrid()


@dataclass(frozen=True)
class TraversalQueue:
    """Outpainting order for one viewpoint: a permutation of all non-reference indices."""

    reference: int
    order: tuple[int, ...]


@dataclass(frozen=True)
class NeighborSet:
    """Already-generated views grid-adjacent to the target index."""

    target: int
    members: frozenset[int]


def grid_rotation(i: int, grid: ViewGrid = DEFAULT_GRID) -> np.ndarray:
    """Rotation from view i's camera frame into the grid's zero-view frame."""
    grid.check_index(i)
    return yaw_matrix(grid.heading_deg(i)) @ pitch_matrix(grid.elevation_deg(i))


def view_to_view_rotation(j: int, i: int, grid: ViewGrid = DEFAULT_GRID) -> np.ndarray:
    """Rotation taking directions in view j's frame into view i's frame."""
    return grid_rotation(i, grid).T @ grid_rotation(j, grid)


def view_world_rotation(i: int, grid: ViewGrid = DEFAULT_GRID) -> np.ndarray:
    """Camera-to-world rotation of view i (world z-up, zero heading = +y)."""
    return WORLD_FROM_VIEW0 @ grid_rotation(i, grid)


def _column_companions(i: int, grid: ViewGrid) -> tuple[int, int]:
    """The two same-column indices of i, ordered as the traversal emits them."""
    row = grid.row(i)
    if row == 0:
        return (i + grid.n_h, i + 2 * grid.n_h)
    if row == 1:
        return (i - grid.n_h, i + grid.n_h)
    return (i - grid.n_h, i - 2 * grid.n_h)


def traversal_queue(r: int, grid: ViewGrid = DEFAULT_GRID) -> TraversalQueue:
    """Clockwise outpainting order starting from the reference view.

    The reference's two same-column companions come first; each following
    column contributes its same-row index and then that index's two
    companions, until the loop closes back at the reference column.
    """
    grid.check_index(r)
    row_base = grid.row(r) * grid.n_h
    col = grid.col(r)
    order: list[int] = list(_column_companions(r, grid))
    for step in range(1, grid.n_h):
        i = row_base + (col + step) % grid.n_h
        order.append(i)
        order.extend(_column_companions(i, grid))
    expected = set(range(grid.n)) - {r}
    assert len(order) == grid.n - 1 and set(order) == expected
    return TraversalQueue(reference=r, order=tuple(order))


def grid_adjacent(i: int, grid: ViewGrid = DEFAULT_GRID) -> frozenset[int]:
    """Indices adjacent to i: same-column neighbors one row away, and
    same-row neighbors one heading away with horizontal wraparound."""
    grid.check_index(i)
    row, col = grid.row(i), grid.col(i)
    row_base = row * grid.n_h
    out = {row_base + (col - 1) % grid.n_h, row_base + (col + 1) % grid.n_h}
    if row > 0:
        out.add(i - grid.n_h)
    if row < 2:
        out.add(i + grid.n_h)
    out.discard(i)
    return frozenset(out)


def neighbor_set(i: int, generated, r: int, grid: ViewGrid = DEFAULT_GRID) -> NeighborSet:
    """Already-generated views adjacent to the target, for guidance warping.

    Raises InvalidStateError when empty, which signals that the caller is
    not following a traversal order rooted at a generated reference.
    """
    gen = set(generated)
    if i in gen:
        raise InvalidArgumentError(f"target index {i} is already generated")
    if r not in gen:
        raise InvalidArgumentError(f"reference index {r} must be generated first")
    members = grid_adjacent(i, grid) & gen
    if not members:
        raise InvalidStateError(f"no generated neighbor adjacent to view {i}; traversal order violated")
    return NeighborSet(target=i, members=frozenset(members))


def _equirect_directions(out_width: int, out_height: int) -> np.ndarray:
    """Unit directions of equirect pixel centers, in the zero-view camera frame."""
    xs = (np.arange(out_width, dtype=np.float64) + 0.5) / out_width * 360.0 - 180.0
    ys = 90.0 - (np.arange(out_height, dtype=np.float64) + 0.5) / out_height * 180.0
    lon, lat = np.meshgrid(np.radians(xs), np.radians(ys))
    cos_lat = np.cos(lat)
    return np.stack([np.sin(lon) * cos_lat, -np.sin(lat), np.cos(lon) * cos_lat], axis=-1)


def _project_into_view(dirs: np.ndarray, rot: np.ndarray, k: Intrinsics):
    """Project reference-frame directions into one view; returns coords and inside mask."""
    d = dirs @ rot  # rot.T applied per direction
    z = d[..., 2]
    front = z > 1e-12
    safe = np.where(front, z, 1.0)
    u = k.fx * d[..., 0] / safe + k.cx
    v = k.fy * d[..., 1] / safe + k.cy
    inside = front & (u >= 0.0) & (u <= k.width - 1.0) & (v >= 0.0) & (v <= k.height - 1.0)
    return u, v, inside


def _edge_weight(u: np.ndarray, v: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Feathering weight: product of normalized distances to the four view edges."""
    half_w = (k.width - 1) / 2.0
    half_h = (k.height - 1) / 2.0
    wu = np.minimum(u, k.width - 1 - u) / half_w
    wv = np.minimum(v, k.height - 1 - v) / half_h
    return np.clip(wu, 0.0, 1.0) * np.clip(wv, 0.0, 1.0)


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    u0 = np.minimum(uc.astype(np.int64), w - 2) if w > 1 else np.zeros_like(uc, np.int64)
    v0 = np.minimum(vc.astype(np.int64), h - 2) if h > 1 else np.zeros_like(vc, np.int64)
    fu = (uc - u0)[..., None]
    fv = (vc - v0)[..., None]
    c00 = img[v0, u0]
    c01 = img[v0, u0 + 1] if w > 1 else c00
    c10 = img[v0 + 1, u0] if h > 1 else c00
    c11 = img[v0 + 1, u0 + 1] if (w > 1 and h > 1) else c00
    return c00 * (1 - fu) * (1 - fv) + c01 * fu * (1 - fv) + c10 * (1 - fu) * fv + c11 * fu * fv


def assemble_equirect(
    views,
    k: Intrinsics,
    grid: ViewGrid = DEFAULT_GRID,
    out_width: int = 2048,
    out_height: int = 1024,
) -> ImageBuffer:
    """Blend the grid's perspective views into an equirectangular panorama.

    Per-view contributions are feathered by distance from the view edges.
    Directions outside every frustum (the pole caps) stay black.
    """
    views = list(views)
    if len(views) != grid.n:
        raise InvalidArgumentError(f"expected {grid.n} views, got {len(views)}")
    for img in views:
        if (img.width, img.height) != (k.width, k.height):
            raise InvalidArgumentError("all views must match the intrinsics dimensions")

    dirs = _equirect_directions(out_width, out_height)
    acc = np.zeros((out_height, out_width, 3), dtype=np.float64)
    wsum = np.zeros((out_height, out_width), dtype=np.float64)
    for i, img in enumerate(views):
        u, v, inside = _project_into_view(dirs, grid_rotation(i, grid), k)
        if not inside.any():
            continue
        weight = np.where(inside, _edge_weight(u, v, k), 0.0)
        sample = _bilinear(img.values.astype(np.float64), u, v)
        acc += sample * weight[..., None]
        wsum += weight

    covered = wsum > 1e-12
    out = np.zeros_like(acc)
    out[covered] = acc[covered] / wsum[covered][..., None]
    return ImageBuffer(np.clip(out, 0.0, 1.0).astype(np.float32))


def equirect_coverage(
    k: Intrinsics,
    grid: ViewGrid = DEFAULT_GRID,
    out_width: int = 2048,
    out_height: int = 1024,
) -> np.ndarray:
    """Boolean map of equirect pixels covered by at least one view frustum."""
    dirs = _equirect_directions(out_width, out_height)
    covered = np.zeros((out_height, out_width), dtype=bool)
    for i in range(grid.n):
        _, _, inside = _project_into_view(dirs, grid_rotation(i, grid), k)
        covered |= inside
    return covered


@dataclass(frozen=True)
class SeamEdge:
    """Photometric agreement of one directed grid adjacency (source warped into target)."""

    target: int
    source: int
    error: float
    valid_fraction: float


@dataclass(frozen=True)
class SeamReport:
    edges: tuple[SeamEdge, ...]
    max_error: float
    mean_error: float

    def edge(self, target: int, source: int) -> SeamEdge:
        for e in self.edges:
            if e.target == target and e.source == source:
                return e
        raise KeyError((target, source))


def _adjacent_pairs(grid: ViewGrid) -> list[tuple[int, int]]:
    pairs = set()
    for i in range(grid.n):
        row, col = grid.row(i), grid.col(i)
        right = row * grid.n_h + (col + 1) % grid.n_h
        pairs.add(frozenset((i, right)))
        if row < 2:
            pairs.add(frozenset((i, i + grid.n_h)))
    return sorted(tuple(sorted(p)) for p in pairs)


def seam_error(views, k: Intrinsics, grid: ViewGrid = DEFAULT_GRID) -> SeamReport:
    """Masked photometric error across every grid adjacency, both directions.

    Each edge warps the source view into the target orientation and
    reports mean absolute error over the overlap. Wraparound pairs are
    included, so a full-circle inconsistency cannot hide.
    """
    views = list(views)
    if len(views) != grid.n:
        raise InvalidArgumentError(f"expected {grid.n} views, got {len(views)}")
    edges: list[SeamEdge] = []
    for a, b in _adjacent_pairs(grid):
        for target, source in ((a, b), (b, a)):
            g = rotation_warp(views[source], k, view_to_view_rotation(source, target, grid))
            m = g.validity
            if m.any():
                diff = np.abs(
                    g.color.values[m].astype(np.float64) - views[target].values[m].astype(np.float64)
                )
                err = float(diff.mean())
            else:
                err = 0.0
            edges.append(SeamEdge(target, source, err, float(m.mean())))
    errs = [e.error for e in edges]
    return SeamReport(tuple(edges), max_error=max(errs), mean_error=float(np.mean(errs)))


@dataclass(frozen=True)
class ConsistencyReport:
    mean_abs_error: float
    valid_fraction: float


def trajectory_consistency(
    prev: ImageBuffer,
    prev_depth: DepthMap,
    next_image: ImageBuffer,
    k: Intrinsics,
    rel: RelativePose,
) -> ConsistencyReport:
    """Photometric agreement between a depth-warped image and the next view.

    Warps ``prev`` through ``rel`` and compares against ``next_image`` on
    pixels the warp reached. The error is 0 when nothing overlaps; check
    ``valid_fraction`` to tell the two cases apart.
    """
    if (prev.width, prev.height) != (next_image.width, next_image.height):
        raise InvalidArgumentError("image dimensions differ")
    g = forward_warp(prev, prev_depth, k, rel)
    m = g.validity
    if not m.any():
        return ConsistencyReport(0.0, 0.0)
    diff = np.abs(g.color.values[m].astype(np.float64) - next_image.values[m].astype(np.float64))
    return ConsistencyReport(float(diff.mean()), float(m.mean()))
