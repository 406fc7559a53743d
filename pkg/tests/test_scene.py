import json

import numpy as np
import pytest

from binpick.geometry import Pose
from binpick.scene import (
    BinModel,
    EASY_POOL,
    FULL_POOL,
    Scene,
    load_scene,
    make_scene,
    save_scene,
    surface_samples,
)
from binpick.shapes import Box, SceneObject, Sphere


class TestBinModel:
    def test_interior_is_free(self):
        b = BinModel()
        pts = np.array([[0.0, 0.0, 0.1], [0.2, 0.1, 0.05], [-0.25, -0.15, 0.2]])
        assert np.all(b.sdf(pts) > 0)

    def test_floor_and_walls_are_solid(self):
        b = BinModel(size=(0.6, 0.4, 0.28), wall_thickness=0.01)
        pts = np.array(
            [[0.0, 0.0, -0.005], [0.304, 0.0, 0.1], [-0.304, 0.0, 0.1], [0.0, 0.204, 0.1]]
        )
        assert np.all(b.sdf(pts) < 0)


class TestMakeScene:
    def test_empty(self):
        scene = make_scene(seed=0, n_objects=0)
        assert scene.objects == []

    def test_single_sphere_rest_height(self):
        pool = {"sphere": {"radius": (0.025, 0.025)}}
        scene = make_scene(seed=1, n_objects=1, shape_pool=pool)
        assert len(scene.objects) == 1
        obj = scene.objects[0]
        assert isinstance(obj.shape, Sphere)
        assert abs(obj.pose.t[2] - 0.025) <= 1e-3

    def test_box_rests_on_floor(self):
        pool = {"box": {"size": ([0.04, 0.04, 0.04], [0.04, 0.04, 0.04])}}
        scene = make_scene(seed=2, n_objects=1, shape_pool=pool)
        obj = scene.objects[0]
        assert abs(obj.pose.t[2] - 0.02) <= 1e-3

    def test_deterministic(self):
        a = make_scene(seed=42, n_objects=6, shape_pool=FULL_POOL)
        b = make_scene(seed=42, n_objects=6, shape_pool=FULL_POOL)
        assert len(a.objects) == len(b.objects)
        for oa, ob in zip(a.objects, b.objects):
            np.testing.assert_array_equal(oa.pose.t, ob.pose.t)
            np.testing.assert_array_equal(oa.pose.R, ob.pose.R)

    @pytest.mark.parametrize("seed", [3, 4])
    def test_no_interpenetration_dense_probe_oracle(self, seed):
        # independent oracle: dense surface point probes between every object pair
        scene = make_scene(seed=seed, n_objects=10, shape_pool=FULL_POOL)
        assert len(scene.objects) >= 2
        rng = np.random.default_rng(999)
        for obj in scene.objects:
            pts_local, _ = obj.shape.sample_surface(2000, rng)
            pts = obj.pose.apply(pts_local)
            for other in scene.objects:
                if other.id == obj.id:
                    continue
                assert float(other.sdf(pts).min()) >= -1e-4
            assert float(scene.bin.sdf(pts).min()) >= -1e-4

    def test_objects_within_bin_footprint(self):
        scene = make_scene(seed=5, n_objects=8, shape_pool=FULL_POOL)
        L, W, H = scene.bin.size
        for obj in scene.objects:
            lo, hi = obj.world_aabb()
            assert lo[0] >= -L / 2 - 1e-9 and hi[0] <= L / 2 + 1e-9
            assert lo[1] >= -W / 2 - 1e-9 and hi[1] <= W / 2 + 1e-9
            assert hi[2] <= H + 1e-9


class TestSurfaceSamples:
    def test_empty_scene(self):
        scene = Scene()
        assert surface_samples(scene, 100, np.random.default_rng(0)) == []

    def test_zero_requested(self):
        scene = make_scene(seed=6, n_objects=2)
        assert surface_samples(scene, 0, np.random.default_rng(0)) == []

    def test_sphere_samples_on_surface_radial_normals(self):
        pool = {"sphere": {"radius": (0.03, 0.03)}}
        scene = make_scene(seed=7, n_objects=1, shape_pool=pool)
        obj = scene.objects[0]
        samples = surface_samples(scene, 500, np.random.default_rng(1))
        for s in samples[:50]:
            r = np.linalg.norm(s.point - obj.pose.t)
            assert abs(r - 0.03) <= 1e-9
            np.testing.assert_allclose(s.normal, (s.point - obj.pose.t) / r, atol=1e-9)

    def test_area_weighted_counts(self):
        # two objects with a known area ratio: counts follow a binomial
        scene = Scene(
            objects=[
                SceneObject(Sphere(0.02), Pose(np.eye(3), np.array([-0.1, 0, 0.02])), id=0),
                SceneObject(Sphere(0.04), Pose(np.eye(3), np.array([0.1, 0, 0.04])), id=1),
            ]
        )
        n = 20_000
        samples = surface_samples(scene, n, np.random.default_rng(2))
        big = sum(1 for s in samples if s.object_id == 1)
        p = 16.0 / 20.0  # area ratio 4:16
        se = np.sqrt(n * p * (1 - p))
        assert abs(big - n * p) <= 3 * se

    def test_counts_match_requested(self):
        scene = make_scene(seed=8, n_objects=3, shape_pool=EASY_POOL)
        samples = surface_samples(scene, 333, np.random.default_rng(3))
        assert len(samples) == 333


class TestSceneIO:
    def test_roundtrip(self, tmp_path):
        scene = make_scene(seed=9, n_objects=4, shape_pool=FULL_POOL)
        path = tmp_path / "scene.json"
        save_scene(path, scene)
        again = load_scene(path)
        assert again.scene_id == scene.scene_id
        assert again.seed == scene.seed
        assert len(again.objects) == len(scene.objects)
        for oa, ob in zip(again.objects, scene.objects):
            assert oa.id == ob.id
            np.testing.assert_allclose(oa.pose.t, ob.pose.t, atol=1e-12)
            np.testing.assert_allclose(oa.pose.R, ob.pose.R, atol=1e-9)
            np.testing.assert_allclose(oa.sdf(np.zeros((1, 3))), ob.sdf(np.zeros((1, 3))), atol=1e-9)

    def test_byte_identical_for_same_seed(self, tmp_path):
        for name in ("a", "b"):
            save_scene(tmp_path / f"{name}.json", make_scene(seed=11, n_objects=5))
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_mesh_objects_roundtrip(self, tmp_path):
        from binpick.shapes import save_obj
        from conftest import unit_cube_mesh

        mesh = unit_cube_mesh(0.04)
        save_obj(tmp_path / "cube.obj", mesh)
        scene = Scene(
            objects=[
                SceneObject(
                    mesh, Pose(np.eye(3), np.array([0.0, 0.0, 0.02])), id=0, mesh_path="cube.obj"
                )
            ]
        )
        save_scene(tmp_path / "scene.json", scene)
        again = load_scene(tmp_path / "scene.json")
        assert len(again.objects) == 1
        np.testing.assert_allclose(
            again.objects[0].sdf(np.array([[0.0, 0.0, 0.02]])), [-0.02], atol=1e-12
        )
