"""Camera model, sphere-traced depth, fusion volumes, and image files."""

import numpy as np
import pytest

from artimode import kinematics as K
from artimode import render as R


@pytest.fixture(scope="module")
def cabinet():
    return K.make_object("cabinet-prismatic", 0)


@pytest.fixture(scope="module")
def views(cabinet):
    return R.default_views(cabinet)


@pytest.fixture(scope="module")
def depth_front(cabinet, views):
    return R.render_depth(cabinet, views[2])


class TestCamera:
    def test_lookat_axis_through_target(self, cabinet):
        c = K.centroid(cabinet)
        cam = R.look_at(c + np.array([0.3, 0.8, 0.4]), c)
        u, v, z = cam.project(c[None, :])
        assert u[0] == pytest.approx(cam.cx, abs=1e-9)
        assert v[0] == pytest.approx(cam.cy, abs=1e-9)
        assert z[0] > 0

    def test_rotation_orthonormal(self, views):
        for cam in views:
            assert np.allclose(cam.rot @ cam.rot.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(cam.rot) == pytest.approx(1.0)

    def test_world_up_maps_to_image_up(self, views):
        cam = views[2]
        # a point above the target must land at smaller v (image up)
        c = cam.pos + 1.0 * cam.rot[:, 2]
        _, v0, _ = cam.project(c[None, :])
        _, v1, _ = cam.project((c + np.array([0, 0, 0.1]))[None, :])
        assert v1[0] < v0[0]


class TestDepth:
    def test_depth_is_camera_z_not_range(self, cabinet, views):
        cam = views[2]
        depth = R.render_depth(cabinet, cam)
        pts, pix = R.depth_to_pointcloud(depth, cam)
        # reprojecting every point must give back its own pixel and depth
        u, v, z = cam.project(pts)
        assert np.allclose(u, pix[:, 1], atol=1e-3)
        assert np.allclose(v, pix[:, 0], atol=1e-3)
        assert np.allclose(z, depth[pix[:, 0], pix[:, 1]], atol=1e-5)

    def test_surface_points_lie_on_surface(self, cabinet, depth_front, views):
        pts, _ = R.depth_to_pointcloud(depth_front, views[2])
        d, _ = K.scene_sdf(cabinet, pts)
        assert np.quantile(np.abs(d), 0.95) < 5e-3

    def test_background_is_zero_and_hits_below_far(self, depth_front):
        assert (depth_front == 0.0).any()
        hits = depth_front[depth_front > 0]
        assert hits.size > 0
        assert hits.max() <= R.FAR

    def test_mirrored_views_mirror_depth(self, cabinet):
        # symmetric object: the -45 and +45 yaw views are x-mirrors
        sym = K.make_object("cabinet-prismatic", 0)
        cams = R.default_views(sym)
        d0 = R.render_depth(sym, cams[0])
        d4 = R.render_depth(sym, cams[4])
        assert d0.shape == d4.shape
        # the cabinet handle bar is centered, the drawers symmetric; allow
        # small asymmetry from ray sampling
        diff = np.abs(d0 - d4[:, ::-1])
        assert np.quantile(diff, 0.95) < 2e-2

    def test_moving_joint_changes_depth(self, cabinet, depth_front, views):
        li = cabinet.movable_links[0]
        opened = K.with_joint_value(cabinet, li, 0.12)
        d1 = R.render_depth(opened, views[2])
        assert np.abs(d1 - depth_front).max() > 0.05


class TestTsdf:
    def test_fusion_brackets_surface(self, cabinet, views):
        vol = R.fuse_views(cabinet, views)
        assert vol.values.shape == (R.GRID_N,) * 3
        seen = vol.weights > 0
        assert seen.any()
        vals = vol.values[seen]
        assert (vals < 0).any() and (vals > 0).any()
        assert vals.min() >= -1.0 and vals.max() <= 1.0

    def test_unseen_voxels_keep_init(self, cabinet, views):
        vol = R.fuse_views(cabinet, views)
        unseen = vol.weights == 0
        assert np.all(vol.values[unseen] == 1.0)

    def test_single_view_fuses_less_than_five(self, cabinet, views):
        vol1 = R.volume_for(cabinet)
        vol1.fuse(R.render_depth(cabinet, views[2]), views[2])
        vol5 = R.fuse_views(cabinet, views)
        assert (vol1.weights > 0).sum() < (vol5.weights > 0).sum()
        assert vol5.weights.max() >= 2

    def test_zero_crossing_near_true_surface(self, cabinet, views):
        vol = R.fuse_views(cabinet, views)
        signs = vol.values
        xing = np.zeros_like(signs, dtype=bool)
        xing[:-1] |= (signs[:-1] * signs[1:]) < 0
        ii, jj, kk = np.nonzero(xing & (vol.weights > 0))
        centers = np.stack([
            vol.origin[0] + (ii + 0.5) * vol.voxel,
            vol.origin[1] + (jj + 0.5) * vol.voxel,
            vol.origin[2] + (kk + 0.5) * vol.voxel,
        ], axis=1)
        d, _ = K.scene_sdf(cabinet, centers)
        # crossings sit within about one voxel of the true surface
        assert np.quantile(np.abs(d), 0.9) < 2 * vol.voxel


class TestImageFiles:
    def test_pgm_roundtrip_millimeter_quantized(self, tmp_path, depth_front):
        path = tmp_path / "d.pgm"
        R.write_pgm(path, depth_front)
        back = R.read_pgm(path)
        assert back.shape == depth_front.shape
        assert np.abs(back - depth_front).max() <= 5e-4 + 1e-6
        # misses stay exactly zero through the round trip
        assert np.all((back == 0) == (depth_front == 0))

    def test_pgm_rejects_8bit(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P5\n2 2\n255\n\x00\x01\x02\x03")
        with pytest.raises(R.RenderError):
            R.read_pgm(p)

    def test_ppm_heatmap_writes(self, tmp_path, depth_front):
        vals = np.full(depth_front.shape, np.nan)
        vals[depth_front > 0] = depth_front[depth_front > 0]
        rgb = R.heatmap_rgb(vals, depth_front)
        path = tmp_path / "h.ppm"
        R.write_ppm(path, rgb)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n")
        assert len(raw) == len(b"P6\n96 96\n255\n") + 96 * 96 * 3
