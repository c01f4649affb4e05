import numpy as np
import pytest

from sparsecap import cameras
from sparsecap.cameras import CameraView, CaptureRig


def simple_view(t=(0.0, 0.0, 0.0), fx=100.0, size=64):
    c = (size - 1) / 2.0
    return CameraView(fx=fx, fy=fx, cx=c, cy=c, rotation=np.eye(3),
                      translation=np.array(t, dtype=float), width=size, height=size)


class TestProjection:
    def test_optical_axis_projects_to_principal_point(self):
        view = simple_view()
        uv, z, ok = view.project(np.array([[0.0, 0.0, 2.5]]))
        assert ok[0] and abs(z[0] - 2.5) < 1e-12
        assert np.allclose(uv[0], [view.cx, view.cy])

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        R, t = cameras.look_at([1.0, 2.0, -3.0], [0.1, -0.2, 0.3])
        view = CameraView(fx=120.0, fy=110.0, cx=31.0, cy=30.0, rotation=R,
                          translation=t, width=64, height=64)
        pts = rng.normal(size=(50, 3)) * 0.3
        uv, z, ok = view.project(pts)
        assert ok.all()
        back = view.unproject(uv[:, 0], uv[:, 1], z)
        assert np.max(np.abs(back - pts)) < 1e-9

    def test_translated_camera_shifts_projection(self):
        # identity rotation, translation (0.1,0,0), fx=100, depth 2:
        # the source axis point lands 5 px off the target principal point
        src = simple_view()
        dst = simple_view(t=(0.1, 0.0, 0.0))
        p = np.array([[0.0, 0.0, 2.0]])
        uv, _, _ = dst.project(p)
        assert abs(uv[0, 0] - (dst.cx + 5.0)) < 1e-12
        assert abs(uv[0, 1] - dst.cy) < 1e-12

    def test_behind_camera_flagged(self):
        view = simple_view()
        _, _, ok = view.project(np.array([[0.0, 0.0, -1.0]]))
        assert not ok[0]


class TestRig:
    def test_icosahedron_vertex_face_angle(self):
        dirs = cameras.icosahedron_directions()
        assert dirs.shape == (6, 3)
        angles = np.degrees(np.arccos(np.clip(dirs[1:] @ dirs[0], -1, 1)))
        assert np.allclose(angles, 37.377, atol=0.1)

    def test_rig_views_look_at_origin(self):
        rig = cameras.make_icosahedron_rig(radius=2.5, image_size=64)
        assert len(rig) == 6
        for view in rig.views:
            c = view.camera_center
            assert abs(np.linalg.norm(c) - 2.5) < 1e-9
            uv, z, ok = view.project(np.zeros((1, 3)))
            assert ok[0] and abs(z[0] - 2.5) < 1e-9
            assert np.allclose(uv[0], [view.cx, view.cy], atol=1e-6)

    def test_rig_json_round_trip(self, tmp_path):
        rig = cameras.make_icosahedron_rig(radius=2.0, image_size=48)
        path = tmp_path / "rig.json"
        rig.save(path)
        loaded = CaptureRig.load(path)
        assert loaded.depth_range == rig.depth_range
        for a, b in zip(rig.views, loaded.views):
            assert np.allclose(a.rotation, b.rotation)
            assert np.allclose(a.translation, b.translation)
            assert a.light_intensity == b.light_intensity

    def test_rig_validation(self):
        v = simple_view()
        with pytest.raises(ValueError):
            CaptureRig(views=[v], depth_range=(1.0, 2.0))
        with pytest.raises(ValueError):
            CaptureRig(views=[v, v], depth_range=(2.0, 1.0))


def textured_plane_images(depth=2.0, size=64, shift=0.25):
    """Two views of a plane z=depth carrying a smooth random texture."""
    rng = np.random.default_rng(7)
    freq_u = rng.uniform(0.5, 1.5, 8)
    freq_v = rng.uniform(0.5, 1.5, 8)
    phase = rng.uniform(0, 2 * np.pi, 8)

    def texture(x, y):
        out = np.zeros_like(x)
        for fu, fv, ph in zip(freq_u, freq_v, phase):
            out += np.sin(2 * np.pi * (fu * x + fv * y) + ph)
        return out / 8.0 + 0.5

    v0 = simple_view(size=size)
    v1 = simple_view(t=(shift, 0.0, 0.0), size=size)
    imgs = []
    for view in (v0, v1):
        u, vv = view.pixel_grid()
        pts = view.unproject(u, vv, depth)
        imgs.append(texture(pts[..., 0], pts[..., 1])[None])
    return v0, v1, imgs[0], imgs[1]


class TestWarping:
    def test_homography_identity_for_same_view(self):
        v0, _, img, _ = textured_plane_images()
        warped, mask = cameras.homography_warp(img, v0, v0, 2.0)
        inner = np.s_[:, 2:-2, 2:-2]
        assert np.max(np.abs(warped[inner] - img[inner])) < 1e-6

    def test_homography_aligns_at_true_depth(self):
        d = 2.0
        v0, v1, img0, img1 = textured_plane_images(depth=d)
        warped, mask = cameras.homography_warp(img1, v1, v0, d)
        inner = mask & (np.abs(warped[0]) > 0)
        resid = np.abs(warped[0] - img0[0])[inner]
        assert resid.mean() < 2e-3  # interpolation error only

    def test_homography_true_depth_beats_wrong_depths(self):
        d = 2.0
        v0, v1, img0, img1 = textured_plane_images(depth=d)
        def residual(dp):
            warped, mask = cameras.homography_warp(img1, v1, v0, dp)
            m = mask & (warped[0] != 0)
            return np.mean((warped[0] - img0[0])[m] ** 2)
        r_true = residual(d)
        for dp in (1.5, 1.8, 2.2, 2.6, 3.0):
            assert residual(dp) > r_true

    def test_wrong_depth_parallax_matches_formula(self):
        d_true, d_wrong, baseline, fx = 2.0, 2.5, 0.25, 100.0
        v0, v1, img0, img1 = textured_plane_images(depth=d_true, shift=baseline)
        # where does the plane point seen at v0's principal point land when
        # warped at the wrong depth? predicted parallax fx*b*|1/d - 1/d*|
        u0 = np.array([v0.cx]); v0c = np.array([v0.cy])
        p_wrong = v0.unproject(u0, v0c, d_wrong)
        uv, _, _ = v1.project(p_wrong.reshape(1, 3))
        p_true = v0.unproject(u0, v0c, d_true)
        uv_true, _, _ = v1.project(p_true.reshape(1, 3))
        shift = abs(uv[0, 0] - uv_true[0, 0])
        predicted = fx * baseline * abs(1 / d_true - 1 / d_wrong)
        assert abs(shift - predicted) < 1e-9

    def test_warp_by_depth_identity(self):
        v0, _, img, _ = textured_plane_images()
        depth = np.full((64, 64), 2.0)
        warped, mask = cameras.warp_image_by_depth(img, v0, v0, depth)
        assert mask.all()
        assert np.max(np.abs(warped - img)) < 1e-9

    def test_warp_by_depth_ground_truth_plane(self):
        v0, v1, img0, img1 = textured_plane_images()
        depth = np.full((64, 64), 2.0)
        warped, mask = cameras.warp_image_by_depth(img1, v1, v0, depth)
        rms = np.sqrt(np.mean((warped[0] - img0[0])[mask] ** 2))
        assert rms < 1e-2


class TestDepthPairMaps:
    def test_single_plane_consistency(self):
        v0, v1, *_ = textured_plane_images()
        depth = np.full((64, 64), 2.0)
        z, zs, mask = cameras.depth_pair_maps(v0, v1, depth, depth)
        assert mask.sum() > 0.5 * mask.size
        assert np.max(np.abs(z - zs)[mask]) < 1e-4

    def test_self_pair_returns_own_depth(self):
        v0, *_ = textured_plane_images()
        depth = np.full((64, 64), 2.0)
        z, zs, mask = cameras.depth_pair_maps(v0, v0, depth, depth)
        assert np.allclose(z[mask], depth[mask])
        assert np.allclose(zs[mask], depth[mask], atol=1e-9)

    def test_occluded_background_has_larger_z(self):
        # view 1 sees a foreground plane at depth 1.5 over half its image;
        # view 0's background pixels that project there must come out occluded
        size = 64
        v0 = simple_view(size=size)
        v1 = simple_view(t=(0.3, 0.0, 0.0), size=size)
        depth0 = np.full((size, size), 2.5)
        u, vv = v1.pixel_grid()
        depth1 = np.where(u < size / 2, 1.5, 2.5)
        z, zs, mask = cameras.depth_pair_maps(v0, v1, depth0, depth1)
        occluded = mask & (z > zs + 0.5)
        assert occluded.sum() > 100  # a sizable occluded band exists


class TestLightDirections:
    def test_principal_point_direction(self):
        v0, *_ = textured_plane_images()
        depth = np.full((64, 64), 2.0)
        li, lij, mask = cameras.light_direction_maps(v0, v0, depth)
        # principal point is between pixels; a pixel on the axis-adjacent
        # position still points almost exactly along -z
        c = 32
        assert li[2, c, c] < -0.999
        assert np.allclose(lij[:, c, c], li[:, c, c])

    def test_unit_norm_everywhere(self):
        v0, v1, *_ = textured_plane_images()
        depth = np.full((64, 64), 2.0)
        li, lij, mask = cameras.light_direction_maps(v0, v1, depth)
        assert np.allclose(np.linalg.norm(li, axis=0)[mask], 1.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(lij, axis=0)[mask], 1.0, atol=1e-12)

    def test_directions_in_reference_frame(self):
        # a camera to the +x side: its light direction at the reference
        # principal point must tilt toward +x in the reference frame
        v0 = simple_view()
        v1 = simple_view(t=(-0.5, 0.0, 0.0))  # center at +0.5 along x
        depth = np.full((64, 64), 2.0)
        li, lij, mask = cameras.light_direction_maps(v0, v1, depth)
        assert lij[0, 32, 32] > 0.1
