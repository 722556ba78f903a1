import json

import numpy as np
import pytest

from wcgen.errors import ChecksumError, InvalidArgumentError, LoadError, NotFoundError
from wcgen.dataio import (
    SyntheticSceneSpec,
    load_scene,
    load_trajectory_manifest,
    save_scene,
    save_trajectory_manifest,
    synth_scene,
    trajectory_from_manifest,
    TrajectoryManifest,
    verify_dataset,
    write_dataset,
)
from wcgen.pipeline import PipelineConfig, Trajectory, run_trajectory
from wcgen.backend.mocks import mock_suite
from wcgen.backend import protocol

from conftest import line_scene_spec


# ---------------------------------------------------------------------------
# Ray-box oracle


def ray_box_exit_oracle(room, origin, direction):
    """Scalar slab intersection: distance to the box boundary from inside."""
    best = float("inf")
    for axis in range(3):
        d = direction[axis]
        if d > 0:
            t = (room[axis] - origin[axis]) / d
        elif d < 0:
            t = (0.0 - origin[axis]) / d
        else:
            continue
        best = min(best, t)
    return best


# ---------------------------------------------------------------------------
# Synthetic scenes


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        SyntheticSceneSpec(room=(0.0, 2.0, 2.0))
    with pytest.raises(InvalidArgumentError):
        SyntheticSceneSpec(viewpoint_positions=((9.0, 1.0, 1.0),))  # outside the room


def test_spec_json_round_trip():
    spec = line_scene_spec()
    back = SyntheticSceneSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert back == spec


def test_center_pixel_depth_is_exact():
    spec = SyntheticSceneSpec(
        room=(8.0, 6.0, 3.0), viewpoint_positions=((4.0, 3.0, 1.5),), image_size=64
    )
    scene = synth_scene(spec, seed=1)
    vp = scene.viewpoint("vp00")
    # view 12 faces +y; the facing wall is 3 m away
    assert vp.depths[12].values[32, 32] == 3.0
    # view 18 faces -y
    assert vp.depths[18].values[32, 32] == 3.0


def test_depth_matches_ray_box_oracle():
    spec = SyntheticSceneSpec(room=(8.0, 6.0, 3.0), viewpoint_positions=((2.5, 4.0, 1.2),), image_size=32)
    scene = synth_scene(spec, seed=2)
    vp = scene.viewpoint("vp00")
    from wcgen.panorama import view_world_rotation

    k = scene.intrinsics
    rng = np.random.default_rng(0)
    for i in (0, 12, 17, 30):
        rot = view_world_rotation(i, scene.grid)
        for _ in range(20):
            u = int(rng.integers(0, 32))
            v = int(rng.integers(0, 32))
            d_cam = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
            d_world = rot @ d_cam
            expected = ray_box_exit_oracle(spec.room, vp.position, d_world)
            assert vp.depths[i].values[v, u] == pytest.approx(expected, abs=1e-6)


def test_synth_scene_deterministic(tmp_path):
    spec = line_scene_spec(n_viewpoints=2, image_size=32)
    a = synth_scene(spec, seed=9)
    b = synth_scene(spec, seed=9)
    va, vb = a.viewpoint("vp00"), b.viewpoint("vp00")
    for i in range(36):
        assert np.array_equal(va.views[i].values, vb.views[i].values)
        assert np.array_equal(va.depths[i].values, vb.depths[i].values)
    c = synth_scene(spec, seed=10)
    assert not np.array_equal(a.viewpoint("vp00").views[12].values, c.viewpoint("vp00").views[12].values)


def test_rendered_neighbors_are_seam_consistent():
    from wcgen.panorama import seam_error

    spec = line_scene_spec(n_viewpoints=2)
    scene = synth_scene(spec, seed=4)
    vp = scene.viewpoint("vp01")
    rep = seam_error(vp.views, scene.intrinsics, scene.grid)
    assert rep.max_error <= 2.0 / 255.0


# ---------------------------------------------------------------------------
# Scene save / load


def test_scene_save_load_round_trip(tmp_path):
    spec = line_scene_spec(n_viewpoints=2, image_size=32)
    scene = synth_scene(spec, seed=3)
    manifest = save_scene(scene, tmp_path / "scene")
    loaded = load_scene(manifest)
    assert loaded.scene_id == scene.scene_id
    assert loaded.grid == scene.grid
    assert loaded.intrinsics == scene.intrinsics
    for vp_id in scene.viewpoint_ids():
        orig = scene.viewpoint(vp_id)
        back = loaded.viewpoint(vp_id)
        assert np.allclose(back.position, orig.position)
        for i in range(36):
            assert np.array_equal(back.views[i].values, orig.views[i].values)
            assert np.array_equal(back.depths[i].validity, orig.depths[i].validity)
            # stored at depth_scale quantization
            sel = orig.depths[i].validity
            assert np.allclose(
                back.depths[i].values[sel], orig.depths[i].values[sel], atol=0.5 / scene.depth_scale + 1e-6
            )


def test_save_twice_is_byte_identical(tmp_path):
    spec = line_scene_spec(n_viewpoints=2, image_size=32)
    scene = synth_scene(spec, seed=3)
    m1 = save_scene(scene, tmp_path / "a")
    m2 = save_scene(synth_scene(spec, seed=3), tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_load_missing_manifest(tmp_path):
    with pytest.raises(LoadError):
        load_scene(tmp_path / "missing.json")


def test_load_malformed_json(tmp_path):
    p = tmp_path / "scene.json"
    p.write_text("{not json")
    with pytest.raises(LoadError):
        load_scene(p)


def test_load_missing_referenced_file(tmp_path):
    spec = line_scene_spec(n_viewpoints=2, image_size=32)
    scene = synth_scene(spec, seed=3)
    manifest = save_scene(scene, tmp_path / "scene")
    (tmp_path / "scene" / "vp00" / "view_00.png").unlink()
    with pytest.raises(LoadError):
        load_scene(manifest)


def test_load_rejects_8bit_depth(tmp_path):
    spec = line_scene_spec(n_viewpoints=2, image_size=32)
    scene = synth_scene(spec, seed=3)
    manifest = save_scene(scene, tmp_path / "scene")
    # overwrite one depth with an 8-bit image
    bad = protocol.encode_image_png(scene.viewpoint("vp00").views[0])
    (tmp_path / "scene" / "vp00" / "depth_00.png").write_bytes(bad)
    loaded = load_scene(manifest)
    with pytest.raises(LoadError):
        loaded.viewpoint("vp00")


# ---------------------------------------------------------------------------
# Trajectory manifests


def test_trajectory_manifest_round_trip(tmp_path):
    m = TrajectoryManifest("t1", "s1", ("vp00", "vp01"), (12, 13), "walk ahead")
    path = save_trajectory_manifest(m, tmp_path / "t.json")
    back = load_trajectory_manifest(path)
    assert back == m


def test_trajectory_from_manifest_derives_references(tmp_path):
    spec = line_scene_spec(n_viewpoints=3, image_size=32)
    scene = synth_scene(spec, seed=3)
    m = TrajectoryManifest("t1", scene.scene_id, tuple(scene.viewpoint_ids()))
    traj = trajectory_from_manifest(m, scene)
    assert traj.length == 3
    assert all(12 <= r < 24 for r in traj.reference_indices)


def test_trajectory_from_manifest_unknown_viewpoint():
    spec = line_scene_spec(n_viewpoints=2, image_size=32)
    scene = synth_scene(spec, seed=3)
    m = TrajectoryManifest("t1", scene.scene_id, ("vp00", "ghost"))
    with pytest.raises(NotFoundError):
        trajectory_from_manifest(m, scene)


def test_trajectory_manifest_too_short():
    with pytest.raises(InvalidArgumentError):
        TrajectoryManifest("t1", "s", ("vp00",))


# ---------------------------------------------------------------------------
# Dataset output


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    spec = line_scene_spec(n_viewpoints=2, image_size=32)
    scene = synth_scene(spec, seed=3)
    traj = Trajectory.from_positions("t-io", scene.viewpoint_ids(), scene.positions, scene.grid)
    cfg = PipelineConfig(run_seed=5, warp_depth="dataset")
    return run_trajectory(traj, scene.viewpoints(), mock_suite("fill-nearest"), cfg, scene.scene_id)


def test_write_dataset_layout_and_verify(generated, tmp_path):
    manifest_path = write_dataset(generated, tmp_path)
    assert manifest_path.name == "generation.json"
    body = json.loads(manifest_path.read_text())
    assert body["schema_version"] == 1
    assert body["trajectory_id"] == "t-io"
    assert len(body["viewpoints"]) == 2
    for vp in body["viewpoints"]:
        assert len(vp["views"]) == 36
        for view in vp["views"]:
            assert view["request"]["mode"] in ("depth_to_image", "image_to_image", "outpaint")
    report = verify_dataset(manifest_path.parent)
    assert report["files"] == 72


def test_write_dataset_round_trip_images(generated, tmp_path):
    manifest_path = write_dataset(generated, tmp_path)
    body = json.loads(manifest_path.read_text())
    first = body["viewpoints"][0]["views"][0]
    img = protocol.decode_image_png((manifest_path.parent / first["file"]).read_bytes())
    assert np.array_equal(img.values, generated.viewpoints[0].views[0].image.values)


def test_verify_detects_tampering(generated, tmp_path):
    manifest_path = write_dataset(generated, tmp_path)
    victim = next(manifest_path.parent.rglob("view_05.png"))
    data = bytearray(victim.read_bytes())
    data[-1] ^= 0xFF
    victim.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        verify_dataset(manifest_path.parent)


def test_write_dataset_idempotent(generated, tmp_path):
    p1 = write_dataset(generated, tmp_path)
    before = {p: p.read_bytes() for p in p1.parent.rglob("*") if p.is_file()}
    p2 = write_dataset(generated, tmp_path)
    after = {p: p.read_bytes() for p in p2.parent.rglob("*") if p.is_file()}
    assert before == after
