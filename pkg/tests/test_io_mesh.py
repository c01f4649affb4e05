import numpy as np
import pytest

from sparsecap import imgio, mesh
from sparsecap.datagen import cube_mesh, sphere_mesh
from sparsecap.mesh import TriangleMesh


class TestPfm:
    def test_color_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(-2, 5, (3, 17, 23)).astype(np.float32)
        p = tmp_path / "img.pfm"
        imgio.write_pfm(p, img)
        back = imgio.read_pfm(p)
        assert back.shape == img.shape
        assert np.array_equal(back, img)

    def test_gray_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.normal(size=(9, 13)).astype(np.float32)
        p = tmp_path / "d.pfm"
        imgio.write_pfm(p, img)
        assert np.array_equal(imgio.read_pfm(p), img)

    def test_single_channel_3d_written_as_gray(self, tmp_path):
        img = np.ones((1, 4, 4), dtype=np.float32)
        p = tmp_path / "r.pfm"
        imgio.write_pfm(p, img)
        assert imgio.read_pfm(p).shape == (4, 4)

    def test_write_is_deterministic(self, tmp_path):
        img = np.arange(12, dtype=np.float32).reshape(3, 2, 2)
        pa, pb = tmp_path / "a.pfm", tmp_path / "b.pfm"
        imgio.write_pfm(pa, img)
        imgio.write_pfm(pb, img)
        assert pa.read_bytes() == pb.read_bytes()


class TestPng:
    def test_png_written(self, tmp_path):
        img = np.linspace(0, 1, 48).reshape(3, 4, 4)
        p = tmp_path / "x.png"
        imgio.write_png(p, img)
        assert p.stat().st_size > 0


class TestMetrics:
    def test_psnr_identical_is_inf(self):
        a = np.random.default_rng(0).uniform(size=(3, 8, 8))
        assert imgio.psnr(a, a) == float("inf")

    def test_psnr_known_value(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 0.1)
        assert abs(imgio.psnr(a, b) - 20.0) < 1e-9


def tetrahedron():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(vertices=v, faces=f)


class TestMeshTopology:
    def test_tetrahedron_euler_and_watertight(self):
        m = tetrahedron()
        assert m.euler_characteristic() == 2
        assert m.is_watertight()

    def test_open_mesh_not_watertight(self):
        m = tetrahedron()
        m2 = TriangleMesh(vertices=m.vertices, faces=m.faces[:3])
        assert not m2.is_watertight()

    def test_sphere_mesh_topology(self):
        v, f, n = sphere_mesh(1.0, segments=24, rings=12)
        m = TriangleMesh(vertices=v, faces=f)
        assert m.euler_characteristic() == 2
        assert m.is_watertight()
        assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)

    def test_cube_mesh_normals_exact(self):
        v, f, n = cube_mesh((0.5, 0.5, 0.5), divisions=4)
        assert np.allclose(np.abs(n).max(axis=1), 1.0)
        # outward orientation: face normals agree with stored normals
        m = TriangleMesh(vertices=v, faces=f)
        fn = m.face_normals()
        fn /= np.linalg.norm(fn, axis=1, keepdims=True)
        stored = n[f[:, 0]]
        assert np.allclose((fn * stored).sum(axis=1), 1.0, atol=1e-9)

    def test_cleaned_drops_degenerate(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 2, 2.]])
        f = np.array([[0, 1, 2], [0, 1, 1]])  # second face has zero area
        m = TriangleMesh(vertices=v, faces=f).cleaned()
        assert m.num_faces == 1
        assert m.num_vertices == 3  # unreferenced vertex dropped

    def test_face_index_validation(self):
        with pytest.raises(ValueError):
            TriangleMesh(vertices=np.zeros((3, 3)), faces=np.array([[0, 1, 5]]))


class TestMeshIO:
    def make_attributed(self):
        rng = np.random.default_rng(3)
        m = tetrahedron()
        K = m.num_vertices
        m.compute_vertex_normals()
        m.albedo = rng.uniform(0, 1, (K, 3))
        nrm = rng.normal(size=(K, 3))
        m.brdf_normal = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        m.roughness = rng.uniform(0.1, 1.0, K)
        m.specular = rng.uniform(0, 1, (K, 3))
        m.blend_weights = rng.dirichlet(np.ones(6), K)
        return m

    def test_ply_round_trip_with_brdf(self, tmp_path):
        m = self.make_attributed()
        p = tmp_path / "m.ply"
        mesh.save_ply(p, m)
        back = mesh.load_ply(p)
        assert back.num_vertices == m.num_vertices
        assert np.array_equal(back.faces, m.faces)
        assert np.allclose(back.vertices, m.vertices, atol=1e-6)
        assert np.allclose(back.albedo, m.albedo, atol=1e-6)
        assert np.allclose(back.brdf_normal, m.brdf_normal, atol=1e-6)
        assert np.allclose(back.roughness, m.roughness, atol=1e-6)
        assert np.allclose(back.specular, m.specular, atol=1e-6)
        assert back.blend_weights.shape == (4, 6)
        assert np.allclose(back.blend_weights, m.blend_weights, atol=1e-6)

    def test_ply_geometry_only(self, tmp_path):
        m = tetrahedron()
        p = tmp_path / "g.ply"
        mesh.save_ply(p, m)
        back = mesh.load_ply(p)
        assert back.albedo is None
        assert not back.has_brdf

    def test_obj_round_trip(self, tmp_path):
        m = tetrahedron()
        p = tmp_path / "m.obj"
        mesh.save_obj(p, m)
        back = mesh.load_obj(p)
        assert np.allclose(back.vertices, m.vertices, atol=1e-7)
        assert np.array_equal(back.faces, m.faces)
