"""Synthetic scenes, camera sampling, splits, and the tensor blob format."""

import json
import math
import os

import numpy as np
import pytest

from scaledig.data import (DEFAULT_RADIUS, Primitive, SceneSpec,
                           generate_dataset, load_blob, load_dataset,
                           make_vehicle_scene, render_ground_truth,
                           sample_pose, save_blob, save_dataset, split_views,
                           _vehicle_family)
from scaledig.renderer import CameraPose, look_at

FOV = math.radians(60.0)


def test_center_pixel_shade_matches_lambert_by_hand():
    # sphere at origin seen from straight above: the center ray hits the
    # pole, whose normal is +z, so the shade is albedo*(ambient + diffuse*
    # l_z) with l the normalized light direction
    albedo = np.array([0.6, 0.4, 0.2])
    spec = SceneSpec(0, [Primitive("sphere", (0, 0, 0), [0.5], albedo)])
    pose = CameraPose(look_at((0.0, 0.0, 2.5)), FOV, 5, 5)
    img = render_ground_truth(spec, pose)
    lz = 0.9 / math.sqrt(0.35 ** 2 + 0.9 ** 2)
    want = albedo * (0.35 + 0.65 * lz)
    np.testing.assert_allclose(img[2, 2], want.astype(np.float32), rtol=1e-6)
    # the sphere subtends ~11 degrees; corners stay background white
    np.testing.assert_array_equal(img[0, 0], np.ones(3, dtype=np.float32))


def test_box_top_face_shade():
    albedo = np.array([0.3, 0.7, 0.5])
    spec = SceneSpec(0, [Primitive("box", (0, 0, 0), (0.4, 0.4, 0.2),
                                   albedo)])
    pose = CameraPose(look_at((0.0, 0.0, 2.5)), FOV, 5, 5)
    img = render_ground_truth(spec, pose)
    lz = 0.9 / math.sqrt(0.35 ** 2 + 0.9 ** 2)
    want = albedo * (0.35 + 0.65 * lz)
    np.testing.assert_allclose(img[2, 2], want.astype(np.float32), rtol=1e-6)


def _mirror_spec(spec: SceneSpec) -> SceneSpec:
    prims = []
    for p in spec.primitives:
        c = p.center.copy()
        c[0] = -c[0]
        prims.append(Primitive(p.kind, c, p.size.copy(), p.albedo.copy()))
    return SceneSpec(spec.seed, prims)


def test_ground_truth_is_x_mirror_equivariant():
    # the light has no x component, so mirroring scene and camera together
    # must reproduce the image bit for bit
    spec = make_vehicle_scene(_vehicle_family(5), 5001)
    pose = sample_pose(np.random.default_rng(9), "hemisphere", 16)
    flip = np.diag([-1.0, 1.0, 1.0, 1.0])
    pose_m = CameraPose(flip @ pose.cam_to_world, pose.fov,
                        pose.height, pose.width)
    img = render_ground_truth(spec, pose)
    img_m = render_ground_truth(_mirror_spec(spec), pose_m)
    np.testing.assert_array_equal(img, img_m)


def test_primitive_validation():
    with pytest.raises(ValueError):
        Primitive("cone", (0, 0, 0), [0.2], (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        Primitive("sphere", (0.9, 0, 0), [0.2], (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        Primitive("box", (0, 0, 0), (0.2, 0.2, 0.2), (1.5, 0.0, 0.0))


def test_vehicle_scene_stays_in_bounds_across_seeds():
    family = _vehicle_family(0)
    for seed in range(40):
        spec = make_vehicle_scene(family, seed)
        assert len(spec.primitives) == 6  # body, cabin, four wheels
        kinds = [p.kind for p in spec.primitives]
        assert kinds == ["box", "box", "sphere", "sphere", "sphere", "sphere"]


def test_sample_pose_hemisphere_bounds():
    rng = np.random.default_rng(3)
    for _ in range(200):
        pose = sample_pose(rng, "hemisphere", 4)
        eye = pose.position
        assert np.linalg.norm(eye) == pytest.approx(DEFAULT_RADIUS)
        assert 0.12 * DEFAULT_RADIUS - 1e-9 <= eye[2] <= 0.92 * DEFAULT_RADIUS


def test_sample_pose_front_facing_cone():
    rng = np.random.default_rng(4)
    for _ in range(100):
        eye = sample_pose(rng, "front-facing", 4).position
        assert eye[0] > 0  # azimuth within half a radian of +x
        assert abs(math.atan2(eye[1], eye[0])) <= 0.5 + 1e-9
    with pytest.raises(ValueError):
        sample_pose(rng, "orbit", 4)


def test_split_views_sizes_and_disjointness():
    for v, n_train in ((160, 144), (50, 45), (10, 9), (2, 1)):
        train, test = split_views(v)
        assert len(train) == n_train and len(test) == v - n_train
        assert set(train) | set(test) == set(range(v))
        assert set(train) & set(test) == set()
    assert split_views(50, seed=1) == split_views(50, seed=1)
    assert split_views(50, seed=1) != split_views(50, seed=2)
    with pytest.raises(ValueError):
        split_views(1)


def test_split_always_leaves_a_test_view():
    train, test = split_views(2, train_fraction=0.99)
    assert len(train) == 1 and len(test) == 1


def test_blob_roundtrip(tmp_path):
    arr = np.random.default_rng(5).normal(size=(7, 5, 3)).astype(np.float32)
    path = os.path.join(tmp_path, "t.sigt")
    save_blob(path, arr)
    np.testing.assert_array_equal(load_blob(path), arr)
    # scalar rank-0 works too
    save_blob(path, np.float32(3.5))
    assert load_blob(path) == np.float32(3.5)


def test_blob_corruption_detected(tmp_path):
    path = os.path.join(tmp_path, "t.sigt")
    save_blob(path, np.ones((4, 4), dtype=np.float32))
    raw = open(path, "rb").read()
    bad_magic = b"JUNK" + raw[4:]
    open(path, "wb").write(bad_magic)
    with pytest.raises(ValueError, match="magic"):
        load_blob(path)
    open(path, "wb").write(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_blob(path)
    bad_version = raw[:4] + b"\x09\x00\x00\x00" + raw[8:]
    open(path, "wb").write(bad_version)
    with pytest.raises(ValueError, match="version"):
        load_blob(path)


def test_generate_dataset_deterministic_and_offset_consistent():
    a = generate_dataset(4, 3, 8, family_seed=2)
    b = generate_dataset(4, 3, 8, family_seed=2)
    tail = generate_dataset(2, 3, 8, family_seed=2, scene_offset=2)
    for s1, s2 in zip(a.scenes, b.scenes):
        for v1, v2 in zip(s1.views, s2.views):
            np.testing.assert_array_equal(v1.image, v2.image)
    for s1, s2 in zip(a.scenes[2:], tail.scenes):
        np.testing.assert_array_equal(s1.views[0].image, s2.views[0].image)
        np.testing.assert_array_equal(s1.views[0].pose.cam_to_world,
                                      s2.views[0].pose.cam_to_world)
    # different offsets give different scenes
    assert not np.array_equal(a.scenes[0].views[0].image,
                              tail.scenes[0].views[0].image)


def test_dataset_roundtrip(tmp_path):
    ds = generate_dataset(2, 4, 8, family_seed=1)
    save_dataset(ds, str(tmp_path))
    back = load_dataset(str(tmp_path))
    assert back.n_scenes == 2 and back.n_views == 4
    assert back.family_seed == 1 and back.size == 8
    for s1, s2 in zip(ds.scenes, back.scenes):
        assert s1.spec.seed == s2.spec.seed
        for v1, v2 in zip(s1.views, s2.views):
            np.testing.assert_array_equal(v1.image, v2.image)
            np.testing.assert_array_equal(v1.pose.cam_to_world,
                                          v2.pose.cam_to_world)
            assert v1.split == v2.split
    assert ds.view_indices("train") == back.view_indices("train")


def test_view_indices_partition():
    ds = generate_dataset(3, 10, 4, family_seed=0)
    train = ds.view_indices("train")
    test = ds.view_indices("test")
    assert len(train) == 27 and len(test) == 3
    assert set(train) | set(test) == {(i, j) for i in range(3)
                                      for j in range(10)}


def test_load_dataset_requires_manifest(tmp_path):
    with pytest.raises(ValueError, match="manifest"):
        load_dataset(str(tmp_path))


def test_load_dataset_rejects_wrong_version(tmp_path):
    ds = generate_dataset(1, 2, 4, family_seed=0)
    save_dataset(ds, str(tmp_path))
    mpath = os.path.join(tmp_path, "manifest.json")
    m = json.load(open(mpath))
    m["version"] = 99
    json.dump(m, open(mpath, "w"))
    with pytest.raises(ValueError, match="version"):
        load_dataset(str(tmp_path))
