"""Geometry kernels: values against closed-form references, and exact
agreement between the compiled and numpy backends."""

import numpy as np
import pytest

from artimode import _kernels

import oracles


def _soup(prims):
    """prims: list of (kind, rot, trans, params)."""
    kinds = np.array([p[0] for p in prims], dtype=np.int32)
    rots = np.ascontiguousarray([p[1] for p in prims], dtype=np.float64).reshape(-1, 3, 3)
    trans = np.ascontiguousarray([p[2] for p in prims], dtype=np.float64).reshape(-1, 3)
    params = np.ascontiguousarray([p[3] for p in prims], dtype=np.float64).reshape(-1, 3)
    return kinds, rots, trans, params


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


class TestSceneSdf:
    def test_unit_box_values(self):
        soup = _soup([(_kernels.BOX, np.eye(3), np.zeros(3), [0.5, 0.5, 0.5])])
        pts = np.array([
            [0.0, 0.0, 0.0],   # center: -0.5
            [1.5, 0.0, 0.0],   # 1.0 outside the +x face
            [0.5, 0.5, 0.5],   # corner: 0
            [1.5, 1.5, 0.0],   # edge diagonal
        ])
        d, who = _kernels.scene_sdf_batch(*soup, pts)
        assert d[0] == pytest.approx(-0.5)
        assert d[1] == pytest.approx(1.0)
        assert d[2] == pytest.approx(0.0, abs=1e-12)
        assert d[3] == pytest.approx(np.sqrt(2.0))
        assert np.all(who == 0)

    def test_cylinder_values(self):
        soup = _soup([(_kernels.CYLINDER, np.eye(3), np.zeros(3), [0.3, 0.5, 0.0])])
        pts = np.array([
            [0.0, 0.0, 0.0],
            [0.8, 0.0, 0.0],
            [0.0, 0.0, 0.9],
        ])
        d, _ = _kernels.scene_sdf_batch(*soup, pts)
        assert d[0] == pytest.approx(-0.3)
        assert d[1] == pytest.approx(0.5)
        assert d[2] == pytest.approx(0.4)

    def test_matches_oracle_under_pose(self):
        rng = np.random.default_rng(0)
        rot = _rot_z(0.7)
        trans = np.array([0.2, -0.1, 0.3])
        half = np.array([0.4, 0.2, 0.3])
        soup = _soup([(_kernels.BOX, rot, trans, half)])
        pts = rng.normal(scale=0.8, size=(50, 3))
        d, _ = _kernels.scene_sdf_batch(*soup, pts)
        for i, p in enumerate(pts):
            local = rot.T @ (p - trans)
            assert d[i] == pytest.approx(oracles.ref_box_sdf(local, half), abs=1e-12)

    def test_min_over_primitives(self):
        soup = _soup([
            (_kernels.BOX, np.eye(3), np.array([-1.0, 0, 0]), [0.2, 0.2, 0.2]),
            (_kernels.BOX, np.eye(3), np.array([+1.0, 0, 0]), [0.2, 0.2, 0.2]),
        ])
        d, who = _kernels.scene_sdf_batch(*soup, np.array([[0.9, 0.0, 0.0]]))
        assert who[0] == 1
        assert d[0] == pytest.approx(-0.1)

    def test_empty_scene(self):
        kinds = np.zeros(0, dtype=np.int32)
        d, who = _kernels.scene_sdf_batch(
            kinds, np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros((0, 3)),
            np.array([[0.0, 0.0, 0.0]]))
        assert np.isinf(d[0]) and who[0] == -1


class TestSphereTrace:
    def test_axis_ray_hits_box_face(self):
        soup = _soup([(_kernels.BOX, np.eye(3), np.zeros(3), [0.5, 0.5, 0.5])])
        origins = np.array([[0.0, -3.0, 0.0]])
        dirs = np.array([[0.0, 1.0, 0.0]])
        t = _kernels.sphere_trace(*soup, origins, dirs, 10.0, 1e-6, 256)
        assert t[0] == pytest.approx(2.5, abs=1e-4)

    def test_miss_returns_negative(self):
        soup = _soup([(_kernels.BOX, np.eye(3), np.zeros(3), [0.5, 0.5, 0.5])])
        origins = np.array([[0.0, -3.0, 5.0]])
        dirs = np.array([[0.0, 1.0, 0.0]])
        t = _kernels.sphere_trace(*soup, origins, dirs, 10.0, 1e-6, 256)
        assert t[0] == -1.0

    def test_tmax_cuts_off(self):
        soup = _soup([(_kernels.BOX, np.eye(3), np.zeros(3), [0.5, 0.5, 0.5])])
        origins = np.array([[0.0, -30.0, 0.0]])
        dirs = np.array([[0.0, 1.0, 0.0]])
        t = _kernels.sphere_trace(*soup, origins, dirs, 3.0, 1e-6, 256)
        assert t[0] == -1.0


class TestFusion:
    def _cam(self):
        # camera 1 m in front of the origin looking along +y, world z up
        rot_c2w = np.array([[-1.0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]]).T
        # rows are world axes of cam x/y/z: cam x = -x, cam y = -z, cam z = +y
        rot_c2w = np.stack([np.array([-1.0, 0, 0]), np.array([0, 0, -1.0]),
                            np.array([0, 1.0, 0])], axis=1)
        pos = np.array([0.0, -1.0, 0.0])
        r = rot_c2w.T
        t = -(r @ pos)
        return r, t

    def test_flat_wall_sign_structure(self):
        # constant 1 m depth: voxels in front of the wall positive, behind negative
        r, t = self._cam()
        depth = np.full((32, 32), 1.0, dtype=np.float32)
        vals = np.ones((24, 24, 24), dtype=np.float32)
        wgts = np.zeros_like(vals)
        vox = 0.025
        origin = np.array([-0.3, -0.3, -0.3])
        _kernels.tsdf_fuse_view(vals, wgts, depth, 40.0, 40.0, 15.5, 15.5,
                                r, t, origin, vox, 0.1)
        seen = wgts > 0
        assert seen.any()
        ii, jj, kk = np.nonzero(seen)
        wy = origin[1] + (jj + 0.5) * vox
        front = wy < -0.05   # between camera plane and wall at y=0
        behind = wy > 0.05   # observable band behind is at most one truncation
        assert front.any() and behind.any()
        assert np.all(vals[ii[front], jj[front], kk[front]] > 0.4)
        assert np.all(vals[ii[behind], jj[behind], kk[behind]] < -0.4)
        # nothing deeper than the truncation band behind the wall is touched
        assert np.all(wy <= 0.1 + vox)

    def test_weights_count_views(self):
        r, t = self._cam()
        depth = np.full((32, 32), 1.0, dtype=np.float32)
        vals = np.ones((16, 16, 16), dtype=np.float32)
        wgts = np.zeros_like(vals)
        origin = np.array([-0.2, -0.2, -0.2])
        for _ in range(3):
            _kernels.tsdf_fuse_view(vals, wgts, depth, 40.0, 40.0, 15.5, 15.5,
                                    r, t, origin, 0.025, 0.1)
        assert set(np.unique(wgts)) <= {0.0, 3.0}

    def test_running_average(self):
        # two views with different depth: the stored value is the mean update
        r, t = self._cam()
        vals = np.ones((8, 8, 8), dtype=np.float32)
        wgts = np.zeros_like(vals)
        origin = np.array([-0.1, -0.1, -0.1])
        d1 = np.full((32, 32), 1.02, dtype=np.float32)
        d2 = np.full((32, 32), 1.06, dtype=np.float32)
        _kernels.tsdf_fuse_view(vals, wgts, d1, 40.0, 40.0, 15.5, 15.5, r, t, origin, 0.025, 0.1)
        v1 = vals.copy()
        _kernels.tsdf_fuse_view(vals, wgts, d2, 40.0, 40.0, 15.5, 15.5, r, t, origin, 0.025, 0.1)
        seen = wgts == 2
        assert seen.any()
        # second update shifts values toward the second estimate by half the gap
        moved = vals[seen] - v1[seen]
        assert np.all(moved >= -1e-6)

    def test_miss_pixels_leave_voxels_untouched(self):
        r, t = self._cam()
        depth = np.zeros((32, 32), dtype=np.float32)
        vals = np.ones((8, 8, 8), dtype=np.float32)
        wgts = np.zeros_like(vals)
        _kernels.tsdf_fuse_view(vals, wgts, depth, 40.0, 40.0, 15.5, 15.5,
                                r, t, np.array([-0.1, -0.1, -0.1]), 0.025, 0.1)
        assert np.all(wgts == 0)
        assert np.all(vals == 1.0)


@pytest.mark.skipif(len(_kernels.backends()) < 2, reason="compiled backend unavailable")
class TestBackendAgreement:
    """The compiled and numpy kernels must agree bit-for-bit."""

    def _random_soup(self, rng, n=6):
        prims = []
        for _ in range(n):
            kind = int(rng.integers(0, 2))
            rot = _rot_z(float(rng.uniform(0, 2 * np.pi)))
            trans = rng.normal(scale=0.4, size=3)
            params = rng.uniform(0.05, 0.5, size=3)
            prims.append((kind, rot, trans, params))
        return _soup(prims)

    def test_sdf_bitwise(self):
        rng = np.random.default_rng(123)
        mods = _kernels.backends()
        soup = self._random_soup(rng)
        pts = rng.normal(scale=1.0, size=(500, 3))
        d_np, w_np = mods["numpy"].scene_sdf_batch(*soup, pts)
        d_cy, w_cy = mods["cython"].scene_sdf_batch(*soup, pts)
        assert np.array_equal(d_np, d_cy)
        assert np.array_equal(w_np, w_cy)

    def test_trace_bitwise(self):
        rng = np.random.default_rng(77)
        mods = _kernels.backends()
        soup = self._random_soup(rng)
        origins = np.tile(np.array([[0.0, -2.0, 0.2]]), (200, 1))
        dirs = rng.normal(size=(200, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t_np = mods["numpy"].sphere_trace(*soup, origins, dirs, 8.0, 1e-4, 128)
        t_cy = mods["cython"].sphere_trace(*soup, origins, dirs, 8.0, 1e-4, 128)
        assert np.array_equal(t_np, t_cy)

    def test_fuse_bitwise(self):
        rng = np.random.default_rng(5)
        mods = _kernels.backends()
        depth = rng.uniform(0.5, 1.5, size=(32, 32)).astype(np.float32)
        depth[rng.random(size=(32, 32)) < 0.2] = 0.0
        rot_c2w = np.stack([np.array([-1.0, 0, 0]), np.array([0, 0, -1.0]),
                            np.array([0, 1.0, 0])], axis=1)
        r = rot_c2w.T
        t = -(r @ np.array([0.0, -1.0, 0.0]))
        args = (40.0, 40.0, 15.5, 15.5, r, t, np.array([-0.3, -0.3, -0.3]), 0.025, 0.1)
        va = np.ones((24, 24, 24), dtype=np.float32)
        wa = np.zeros_like(va)
        vb = va.copy()
        wb = wa.copy()
        mods["numpy"].tsdf_fuse_view(va, wa, depth, *args)
        mods["cython"].tsdf_fuse_view(vb, wb, depth, *args)
        assert np.array_equal(va, vb)
        assert np.array_equal(wa, wb)
