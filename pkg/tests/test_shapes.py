import numpy as np
import pytest

from binpick.geometry import Pose, normalize, rotation_about_axis
from binpick.shapes import Box, Cylinder, SceneObject, Sphere, TriMesh, load_obj, save_obj


from conftest import unit_cube_mesh


class TestSdfClosedForms:
    def test_sphere(self):
        s = Sphere(0.5)
        pts = np.array([[0, 0, 0], [1, 0, 0], [0, 0.5, 0], [0.3, 0.4, 0]])
        np.testing.assert_allclose(s.sdf(pts), [-0.5, 0.5, 0.0, 0.0], atol=1e-12)

    def test_box(self):
        b = Box([2.0, 2.0, 2.0])
        pts = np.array([[0, 0, 0], [2, 0, 0], [1, 1, 1], [2, 2, 0], [0.5, 0, 0]])
        expect = [-1.0, 1.0, 0.0, np.sqrt(2.0), -0.5]
        np.testing.assert_allclose(b.sdf(pts), expect, atol=1e-12)

    def test_cylinder(self):
        c = Cylinder(radius=1.0, height=2.0)
        pts = np.array([[0, 0, 0], [2, 0, 0], [0, 0, 2], [1, 0, 1], [0, 0, 0.5]])
        expect = [-1.0, 1.0, 1.0, 0.0, -0.5]
        np.testing.assert_allclose(c.sdf(pts), expect, atol=1e-12)

    def test_mesh_cube_matches_box(self):
        mesh = unit_cube_mesh(1.0)
        box = Box([1.0, 1.0, 1.0])
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.0, 1.0, size=(300, 3))
        np.testing.assert_allclose(mesh.sdf(pts), box.sdf(pts), atol=1e-9)


class TestRays:
    def test_sphere_entry(self):
        s = Sphere(1.0)
        o = np.array([[-3.0, 0.0, 0.0]])
        d = np.array([[1.0, 0.0, 0.0]])
        hit, t, n = s.ray_entry(o, d)
        assert hit[0] and abs(t[0] - 2.0) <= 1e-12
        np.testing.assert_allclose(n[0], [-1.0, 0.0, 0.0], atol=1e-12)

    def test_box_entry_normal(self):
        b = Box([1.0, 1.0, 1.0])
        hit, t, n = b.ray_entry(np.array([[0.0, 0.0, 5.0]]), np.array([[0.0, 0.0, -1.0]]))
        assert hit[0] and abs(t[0] - 4.5) <= 1e-12
        np.testing.assert_allclose(n[0], [0.0, 0.0, 1.0])

    def test_unnormalized_direction_gives_z_depth(self):
        # direction with z component 1: the ray parameter equals the z drop
        b = Box([1.0, 1.0, 1.0])
        d = np.array([[0.3, -0.2, -1.0]])
        o = np.array([[0.3 * -4.5 * -1, -0.2 * -4.5 * -1, 5.0]])  # crafted to hit the top
        o = np.array([[-0.3 * 4.5, 0.2 * 4.5, 5.0]])
        hit, t, n = b.ray_entry(o, d)
        assert hit[0]
        assert abs(t[0] - 4.5) <= 1e-12

    def test_cylinder_side_and_cap(self):
        c = Cylinder(1.0, 2.0)
        hit, t, n = c.ray_entry(np.array([[-5.0, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
        assert hit[0] and abs(t[0] - 4.0) <= 1e-12
        np.testing.assert_allclose(n[0], [-1.0, 0.0, 0.0], atol=1e-12)
        hit, t, n = c.ray_entry(np.array([[0.0, 0.0, 5.0]]), np.array([[0.0, 0.0, -1.0]]))
        assert hit[0] and abs(t[0] - 4.0) <= 1e-12
        np.testing.assert_allclose(n[0], [0.0, 0.0, 1.0], atol=1e-12)

    def test_hits_entry_exit_sphere(self):
        s = Sphere(1.0)
        hits = s.ray_hits(np.array([-3.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert len(hits) == 2
        (t0, n0, in0), (t1, n1, in1) = hits
        assert in0 and not in1
        assert abs(t0 - 2.0) <= 1e-12 and abs(t1 - 4.0) <= 1e-12
        np.testing.assert_allclose(n1, [1.0, 0.0, 0.0], atol=1e-12)

    def test_mesh_hits_match_box(self):
        mesh = unit_cube_mesh(1.0)
        o = np.array([-3.0, 0.1, 0.2])
        d = np.array([1.0, 0.0, 0.0])
        hits = mesh.ray_hits(o, d)
        entering = [h for h in hits if h[2]]
        exiting = [h for h in hits if not h[2]]
        assert abs(entering[0][0] - 2.5) <= 1e-9
        assert abs(exiting[-1][0] - 3.5) <= 1e-9


class TestSurfaceSampling:
    def test_sphere_radius_and_normals(self):
        s = Sphere(0.25)
        pts, normals = s.sample_surface(500, np.random.default_rng(1))
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 0.25, atol=1e-9)
        np.testing.assert_allclose(pts / 0.25, normals, atol=1e-9)

    def test_box_face_counts_binomial(self):
        # box with one dominant pair of faces: counts ~ binomial(n, area frac)
        b = Box([4.0, 1.0, 1.0])
        n = 20_000
        pts, normals = b.sample_surface(n, np.random.default_rng(2))
        total = b.area()
        p_top = 4.0 * 1.0 / total
        on_top = np.sum(normals[:, 2] > 0.5)
        se = np.sqrt(n * p_top * (1 - p_top))
        assert abs(on_top - n * p_top) <= 3 * se

    def test_cylinder_samples_on_surface(self):
        c = Cylinder(0.5, 1.0)
        pts, normals = c.sample_surface(2000, np.random.default_rng(3))
        d = np.abs(c.sdf(pts))
        assert d.max() <= 1e-9
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12)

    def test_mesh_samples_on_surface(self):
        mesh = unit_cube_mesh(1.0)
        pts, normals = mesh.sample_surface(1000, np.random.default_rng(4))
        assert np.abs(mesh.sdf(pts)).max() <= 1e-9


class TestSceneObject:
    def test_posed_sdf(self):
        obj = SceneObject(
            Sphere(0.5), Pose(np.eye(3), np.array([1.0, 2.0, 3.0])), id=0
        )
        assert abs(obj.sdf(np.array([[1.0, 2.0, 3.0]]))[0] + 0.5) <= 1e-12
        assert abs(obj.sdf(np.array([[1.0, 2.0, 4.0]]))[0] - 0.5) <= 1e-12

    def test_posed_ray(self):
        R = rotation_about_axis(np.array([0.0, 0.0, 1.0]), np.pi / 4)
        obj = SceneObject(Box([1.0, 1.0, 1.0]), Pose(R, np.array([0.0, 0.0, 1.0])), id=1)
        hit, t, n = obj.ray_entry(np.array([[0.0, 0.0, 5.0]]), np.array([[0.0, 0.0, -1.0]]))
        assert hit[0] and abs(t[0] - 3.5) <= 1e-12
        np.testing.assert_allclose(n[0], [0.0, 0.0, 1.0], atol=1e-12)

    def test_world_aabb(self):
        obj = SceneObject(Box([2.0, 1.0, 1.0]), Pose(np.eye(3), np.array([0.0, 0.0, 0.5])), id=2)
        lo, hi = obj.world_aabb()
        np.testing.assert_allclose(lo, [-1.0, -0.5, 0.0])
        np.testing.assert_allclose(hi, [1.0, 0.5, 1.0])


def test_obj_roundtrip(tmp_path):
    mesh = unit_cube_mesh(0.06)
    path = tmp_path / "cube.obj"
    save_obj(path, mesh)
    again = load_obj(path)
    np.testing.assert_allclose(again.vertices, mesh.vertices)
    np.testing.assert_array_equal(again.faces, mesh.faces)
    assert abs(again.area() - 6 * 0.06**2) <= 1e-12


def test_probe_points_on_surface():
    for shape in (Box([0.04, 0.05, 0.03]), Sphere(0.025), Cylinder(0.02, 0.07), unit_cube_mesh(0.05)):
        probes = shape.probe_points()
        assert np.abs(shape.sdf(probes)).max() <= 1e-9
