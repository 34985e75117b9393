"""Pure-numpy fallback for the geometry kernels.

Formula structure and operation order deliberately mirror ``_fast.pyx`` so
both backends agree bit-for-bit (the extension is compiled with FP
contraction off for the same reason).
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"

BOX = 0
CYLINDER = 1


def _local_coords(rots, trans, pts):
    # (P, N, 3) coordinates of pts in each primitive frame; explicit
    # component products keep the add order identical to the C loop.
    d0 = pts[None, :, 0] - trans[:, 0, None]
    d1 = pts[None, :, 1] - trans[:, 1, None]
    d2 = pts[None, :, 2] - trans[:, 2, None]
    lx = d0 * rots[:, 0, 0, None] + d1 * rots[:, 1, 0, None] + d2 * rots[:, 2, 0, None]
    ly = d0 * rots[:, 0, 1, None] + d1 * rots[:, 1, 1, None] + d2 * rots[:, 2, 1, None]
    lz = d0 * rots[:, 0, 2, None] + d1 * rots[:, 1, 2, None] + d2 * rots[:, 2, 2, None]
    return lx, ly, lz


def _prim_dists(kinds, rots, trans, params, pts):
    lx, ly, lz = _local_coords(rots, trans, pts)
    dists = np.empty((kinds.shape[0], pts.shape[0]), dtype=np.float64)
    box = kinds == BOX
    if box.any():
        qx = np.abs(lx[box]) - params[box, 0, None]
        qy = np.abs(ly[box]) - params[box, 1, None]
        qz = np.abs(lz[box]) - params[box, 2, None]
        ox = np.maximum(qx, 0.0)
        oy = np.maximum(qy, 0.0)
        oz = np.maximum(qz, 0.0)
        outside = np.sqrt(ox * ox + oy * oy + oz * oz)
        inside = np.minimum(np.maximum(qx, np.maximum(qy, qz)), 0.0)
        dists[box] = outside + inside
    cyl = kinds == CYLINDER
    if cyl.any():
        dr = np.sqrt(lx[cyl] * lx[cyl] + ly[cyl] * ly[cyl]) - params[cyl, 0, None]
        dz = np.abs(lz[cyl]) - params[cyl, 1, None]
        orr = np.maximum(dr, 0.0)
        oz = np.maximum(dz, 0.0)
        dists[cyl] = np.minimum(np.maximum(dr, dz), 0.0) + np.sqrt(orr * orr + oz * oz)
    return dists


def scene_sdf_batch(kinds, rots, trans, params, pts):
    """Min over primitives of their SDFs. Returns (dist (N,), nearest prim (N,) int32)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    n = pts.shape[0]
    if kinds.shape[0] == 0:
        return np.full(n, np.inf), np.full(n, -1, dtype=np.int32)
    dists = _prim_dists(kinds, rots, trans, params, pts)
    owner = np.argmin(dists, axis=0).astype(np.int32)
    return dists[owner, np.arange(n)], owner


def sphere_trace(kinds, rots, trans, params, origins, dirs, tmax, tol, max_steps):
    """March each ray along the scene SDF. Returns hit parameter t, -1.0 for misses."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    t = np.zeros(n, dtype=np.float64)
    result = np.full(n, -1.0, dtype=np.float64)
    if kinds.shape[0] == 0:
        return result
    active = np.arange(n)
    for _ in range(max_steps):
        pts = origins[active] + t[active, None] * dirs[active]
        d, _ = scene_sdf_batch(kinds, rots, trans, params, pts)
        hit = d < tol
        if hit.any():
            result[active[hit]] = t[active[hit]]
        t[active] += d
        alive = ~hit & (t[active] <= tmax)
        active = active[alive]
        if active.size == 0:
            break
    return result


def tsdf_fuse_view(values, weights, depth, fx, fy, cx, cy, rot_w2c, t_w2c, origin, voxel, mu):
    """Fuse one depth view into (values, weights) in place.

    Projective signed distance s = depth(pixel) - camera_z(voxel), clamped to
    [-mu, mu] and stored normalized by mu via a running weighted average.
    Voxels behind the surface beyond mu, unprojectable voxels, and voxels
    mapping to miss pixels are left untouched.
    """
    nx, ny, nz = values.shape
    h, w = depth.shape
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    wx = origin[0] + (ii + 0.5) * voxel
    wy = origin[1] + (jj + 0.5) * voxel
    wz = origin[2] + (kk + 0.5) * voxel
    cam_x = rot_w2c[0, 0] * wx + rot_w2c[0, 1] * wy + rot_w2c[0, 2] * wz + t_w2c[0]
    cam_y = rot_w2c[1, 0] * wx + rot_w2c[1, 1] * wy + rot_w2c[1, 2] * wz + t_w2c[1]
    cam_z = rot_w2c[2, 0] * wx + rot_w2c[2, 1] * wy + rot_w2c[2, 2] * wz + t_w2c[2]
    ok = cam_z > 1e-9
    u = np.floor(fx * cam_x / np.where(ok, cam_z, 1.0) + cx + 0.5).astype(np.int64)
    v = np.floor(fy * cam_y / np.where(ok, cam_z, 1.0) + cy + 0.5).astype(np.int64)
    ok &= (u >= 0) & (u < w) & (v >= 0) & (v < h)
    d_obs = np.where(ok, depth[np.clip(v, 0, h - 1), np.clip(u, 0, w - 1)], 0.0).astype(np.float64)
    ok &= d_obs > 0.0
    s = d_obs - cam_z
    ok &= s >= -mu
    s = np.minimum(s, mu)
    sn = s / mu
    wv = weights[ii, jj, kk].astype(np.float64)
    new_val = (wv * values[ii, jj, kk].astype(np.float64) + sn) / (wv + 1.0)
    values[ii, jj, kk] = np.where(ok, new_val, values[ii, jj, kk].astype(np.float64)).astype(np.float32)
    weights[ii, jj, kk] = np.where(ok, wv + 1.0, wv).astype(np.float32)
