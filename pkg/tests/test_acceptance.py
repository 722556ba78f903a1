"""Acceptance gate: one test per criterion, each printing a pass/fail line
with its runtime against the stated budget.

Run with: pytest tests/test_acceptance.py -v -s
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from wcgen.dataio import SyntheticSceneSpec, synth_scene, write_dataset
from wcgen.geometry import (
    DepthMap,
    ImageBuffer,
    RelativePose,
    intrinsics_from_fov,
    project,
    unproject,
    yaw_matrix,
)
from wcgen.panorama import (
    DEFAULT_GRID,
    ViewGrid,
    grid_adjacent,
    neighbor_set,
    seam_error,
    trajectory_consistency,
    traversal_queue,
)
from wcgen.pipeline import PipelineConfig, Trajectory, run_trajectories, run_trajectory
from wcgen.trajwarp import forward_warp
from wcgen.viewwarp import merge_guidance, rotation_warp
from wcgen.trajwarp import GuidanceImage
from wcgen.backend import MockService, mock_suite
from wcgen.backend.contracts import GenerationRequest, Mode
from wcgen.backend.mocks import FillNearestBackend
from wcgen.backend.remote import RemoteCaptionBackend, RemoteDepthBackend, remote_generate
from wcgen.backend import protocol

from conftest import line_scene_spec, random_image, smooth_image
from test_trajwarp import splat_oracle, two_plane_scene


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name} ({time.perf_counter() - start:.2f}s)")
        raise
    elapsed = time.perf_counter() - start
    print(f"[PASS] {name} ({elapsed:.2f}s, budget {budget_s:.0f}s)")
    assert elapsed < budget_s, f"{name} exceeded its runtime budget"


@pytest.fixture(scope="module")
def scene():
    return synth_scene(line_scene_spec(), seed=7)


def test_c1_geometry_round_trips():
    with criterion("C1 geometry-round-trips", 10.0):
        k = intrinsics_from_fov(512, 512, 60.0)
        rng = np.random.default_rng(123)
        n = 100_000
        us = rng.uniform(0.0, k.width - 1, n)
        vs = rng.uniform(0.0, k.height - 1, n)
        ds = rng.uniform(0.05, 80.0, n)
        worst = 0.0
        for u, v, d in zip(us, vs, ds):
            p = unproject((u, v), d, k)
            (u2, v2), d2 = project(p, k)
            worst = max(worst, abs(u2 - u), abs(v2 - v), abs(d2 - d))
        assert worst < 1e-9, f"worst round-trip error {worst}"

        img = smooth_image(256, 256, 42)
        k256 = intrinsics_from_fov(256, 256, 60.0)
        fwd = rotation_warp(img, k256, yaw_matrix(25.0))
        back = rotation_warp(fwd.color, k256, yaw_matrix(-25.0))
        vimg = ImageBuffer(np.repeat(fwd.validity[..., None], 3, axis=2).astype(np.float32))
        vband = rotation_warp(vimg, k256, yaw_matrix(-25.0))
        both = back.validity & (vband.color.values[..., 0] > 1 - 1e-6)
        diff = np.abs(back.color.values[both].astype(np.float64) - img.values[both].astype(np.float64))
        assert diff.mean() <= 2.0 / 255.0


def test_c2_traversal_queue():
    with criterion("C2 traversal-queue", 1.0):
        for grid in (DEFAULT_GRID, ViewGrid(n_h=3)):
            for r in range(grid.n):
                q = traversal_queue(r, grid)
                assert set(q.order) == set(range(grid.n)) - {r}
                assert len(q.order) == grid.n - 1
        assert traversal_queue(12).order[:3] == (0, 24, 13)
        assert traversal_queue(0).order[:3] == (12, 24, 1)


def test_c3_neighbor_sets():
    with criterion("C3 neighbor-sets", 1.0):
        for grid in (DEFAULT_GRID, ViewGrid(n_h=3)):
            for r in range(grid.n):
                generated = {r}
                row_base = grid.row(r) * grid.n_h
                closing = row_base + (grid.col(r) + grid.n_h - 1) % grid.n_h
                for i in traversal_queue(r, grid).order:
                    ns = neighbor_set(i, generated, r, grid)
                    assert ns.members, f"empty set at r={r} i={i}"
                    adj = grid_adjacent(i, grid)
                    for j in ns.members:
                        assert j in generated and j in adj
                    if i == closing:
                        wrap = row_base + (grid.col(i) + 1) % grid.n_h
                        assert wrap in ns.members, f"loop closure misses wraparound at r={r}"
                    generated.add(i)


def test_c4_occlusion_oracle():
    with criterion("C4 occlusion-oracle", 30.0):
        k = intrinsics_from_fov(64, 64, 60.0)
        rng = np.random.default_rng(2024)
        for case in range(20):
            near = float(rng.uniform(1.2, 3.0))
            far = near + float(rng.uniform(0.5, 3.5))
            split = int(rng.integers(12, 52))
            img, depth = two_plane_scene(k, near, far, split)
            rel = RelativePose(
                yaw_matrix(float(rng.uniform(-10.0, 10.0))),
                np.array(
                    [rng.uniform(-1.2, 1.2), rng.uniform(-0.4, 0.4), rng.uniform(-0.5, 0.5)]
                ),
            )
            got = forward_warp(img, depth, k, rel)
            o_color, o_depth, o_valid = splat_oracle(img, depth, k, rel)
            assert np.array_equal(got.validity, o_valid), f"case {case}: validity differs"
            assert np.array_equal(got.color.values, o_color), f"case {case}: winner identity differs"
            if o_valid.any():
                assert float(np.max(np.abs(got.depth[o_valid] - o_depth[o_valid]))) <= 1e-6


def test_c5_synthetic_room_consistency(scene):
    with criterion("C5 synthetic-room-consistency", 60.0):
        ids = scene.viewpoint_ids()
        for vid in ids[:2]:
            vp = scene.viewpoint(vid)
            rep = seam_error(vp.views, scene.intrinsics, scene.grid)
            assert rep.max_error <= 2.0 / 255.0

        traj = Trajectory.from_positions("acc", ids, scene.positions, scene.grid)
        for t in range(1, traj.length):
            a = scene.viewpoint(ids[t - 1])
            b = scene.viewpoint(ids[t])
            res = trajectory_consistency(
                a.views[traj.reference_indices[t - 1]],
                a.depths[traj.reference_indices[t - 1]],
                b.views[traj.reference_indices[t]],
                scene.intrinsics,
                traj.relative_poses[t - 1],
            )
            assert res.mean_abs_error <= 3.0 / 255.0
            assert res.valid_fraction >= 0.7

        vp = scene.viewpoint(ids[0])
        views = list(vp.views)
        views[17] = random_image(128, 128, 999)
        rep = seam_error(views, scene.intrinsics, scene.grid)
        for other in (16, 18, 5, 29):
            assert rep.edge(17, other).error > 10.0 / 255.0


def test_c6_merge_algebra():
    with criterion("C6 merge-algebra", 10.0):
        rng = np.random.default_rng(55)
        for _ in range(200):
            h, w = int(rng.integers(4, 12)), int(rng.integers(4, 12))
            a_col = rng.random((h, w, 3)).astype(np.float32)
            b_col = rng.random((h, w, 3)).astype(np.float32)
            a_val = rng.random((h, w)) < 0.5
            b_val = rng.random((h, w)) < 0.5

            # disjoint case: restrict b to the complement of a
            b_dis = b_val & ~a_val
            az = a_col.copy()
            az[~a_val] = 0
            bz = b_col.copy()
            bz[~b_dis] = 0
            ga = GuidanceImage(ImageBuffer(az), a_val)
            gb = GuidanceImage(ImageBuffer(bz), b_dis)
            merged, hole = merge_guidance([ga, gb])
            union = a_val | b_dis
            assert np.array_equal(hole, ~union)
            assert np.array_equal(merged.color.values[a_val], az[a_val])
            assert np.array_equal(merged.color.values[b_dis], bz[b_dis])

            # single input is the identity
            solo, solo_hole = merge_guidance([ga])
            assert np.array_equal(solo.color.values, ga.color.values)
            assert np.array_equal(solo_hole, ~a_val)

            # overlapping pixels average within a gray level
            bz2 = b_col.copy()
            bz2[~b_val] = 0
            gb2 = GuidanceImage(ImageBuffer(bz2), b_val)
            merged2, _ = merge_guidance([ga, gb2])
            both = a_val & b_val
            if both.any():
                expected = (az[both].astype(np.float64) + bz2[both].astype(np.float64)) / 2.0
                assert np.max(np.abs(merged2.color.values[both] - expected)) <= 1.0 / 255.0


def test_c7_end_to_end_determinism(scene, tmp_path):
    with criterion("C7 end-to-end-determinism", 120.0):
        traj = Trajectory.from_positions("det", scene.viewpoint_ids(), scene.positions, scene.grid)
        viewpoints = scene.viewpoints()
        digests = []
        counts = None
        for run, workers in ((0, 1), (1, 1), (2, 4)):
            cfg = PipelineConfig(run_seed=7, warp_depth="dataset", workers=workers)
            results = run_trajectories([traj], viewpoints, mock_suite("fill-nearest"), cfg, scene.scene_id)
            out = tmp_path / f"run{run}"
            write_dataset(results[0], out)
            blob = {
                str(p.relative_to(out)): p.read_bytes()
                for p in sorted(out.rglob("*"))
                if p.is_file()
            }
            digests.append(blob)
            counts = results[0].mode_counts()
            assert results[0].fallback_count() == 0
        assert digests[0] == digests[1] == digests[2]
        assert counts == {"depth_to_image": 1, "image_to_image": 4, "outpaint": 5 * 35}


def test_c8_fallback_behavior():
    with criterion("C8 fallback-behavior", 10.0):
        spec = SyntheticSceneSpec(
            room=(8.0, 6.0, 3.0),
            viewpoint_positions=((4.0, 2.0, 1.5), (4.0, 3.0, 1.5), (4.0, 2.2, 1.5)),
            image_size=64,
            scene_id="backtrack",
        )
        bscene = synth_scene(spec, seed=5)
        traj = Trajectory.from_positions("fb", bscene.viewpoint_ids(), bscene.positions, bscene.grid)
        cfg = PipelineConfig(run_seed=3, warp_depth="dataset")
        gen = run_trajectory(traj, bscene.viewpoints(), mock_suite("fill-nearest"), cfg, spec.scene_id)
        assert gen.viewpoints[1].fallback
        assert gen.viewpoints[1].overlap == 0.0
        r = gen.viewpoints[1].reference_index
        assert gen.viewpoints[1].views[r].request.mode == "depth_to_image"


def test_c9_protocol_transparency():
    with criterion("C9 protocol-transparency", 30.0):
        with MockService(mock_suite("fill-nearest")) as svc:
            img = random_image(32, 24, 77)
            mask = np.zeros((24, 32), dtype=np.float32)
            mask[:, 16:] = 1.0
            requests = [
                GenerationRequest(Mode.DEPTH_TO_IMAGE, prompt="a room", depth=DepthMap.constant(32, 24, 2.0), seed=1),
                GenerationRequest(Mode.IMAGE_TO_IMAGE, prompt="a room", init_image=img, strength=0.4, seed=2),
                GenerationRequest(Mode.OUTPAINT, prompt="a room", init_image=img, mask=mask, seed=3),
            ]
            local_backend = FillNearestBackend()
            for req in requests:
                local = local_backend.generate(req)
                remote = remote_generate(svc.base_url, req)
                assert np.array_equal(local.image.values, remote.image.values)
                assert protocol.encode_image_png(local.image) == protocol.encode_image_png(remote.image)
            depth = RemoteDepthBackend(svc.base_url).estimate_depth(img)
            assert np.all(depth.values == 3.0)
            assert RemoteCaptionBackend(svc.base_url).caption(img) == "an indoor scene"
