# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels.

Same formulas in the same order as ``_slow.py``; keep the two in sync.
The build disables FP contraction so results match numpy bit-for-bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, fabs, floor, INFINITY

cnp.import_array()

NAME = "cython"

BOX = 0
CYLINDER = 1


cdef inline double _prim_dist(int kind,
                              const double[:, :, ::1] rots,
                              const double[:, ::1] trans,
                              const double[:, ::1] params,
                              Py_ssize_t p,
                              double x, double y, double z) noexcept nogil:
    cdef double d0 = x - trans[p, 0]
    cdef double d1 = y - trans[p, 1]
    cdef double d2 = z - trans[p, 2]
    cdef double lx = d0 * rots[p, 0, 0] + d1 * rots[p, 1, 0] + d2 * rots[p, 2, 0]
    cdef double ly = d0 * rots[p, 0, 1] + d1 * rots[p, 1, 1] + d2 * rots[p, 2, 1]
    cdef double lz = d0 * rots[p, 0, 2] + d1 * rots[p, 1, 2] + d2 * rots[p, 2, 2]
    cdef double qx, qy, qz, ox, oy, oz, inside, dr, dz, orr
    if kind == 0:
        qx = fabs(lx) - params[p, 0]
        qy = fabs(ly) - params[p, 1]
        qz = fabs(lz) - params[p, 2]
        ox = qx if qx > 0.0 else 0.0
        oy = qy if qy > 0.0 else 0.0
        oz = qz if qz > 0.0 else 0.0
        inside = qy if qy > qz else qz
        inside = qx if qx > inside else inside
        inside = inside if inside < 0.0 else 0.0
        return sqrt(ox * ox + oy * oy + oz * oz) + inside
    else:
        dr = sqrt(lx * lx + ly * ly) - params[p, 0]
        dz = fabs(lz) - params[p, 1]
        orr = dr if dr > 0.0 else 0.0
        oz = dz if dz > 0.0 else 0.0
        inside = dr if dr > dz else dz
        inside = inside if inside < 0.0 else 0.0
        return inside + sqrt(orr * orr + oz * oz)


cdef inline double _scene_dist(const int[::1] kinds,
                               const double[:, :, ::1] rots,
                               const double[:, ::1] trans,
                               const double[:, ::1] params,
                               double x, double y, double z,
                               Py_ssize_t* who) noexcept nogil:
    cdef double best = INFINITY
    cdef double d
    cdef Py_ssize_t p
    who[0] = -1
    for p in range(kinds.shape[0]):
        d = _prim_dist(kinds[p], rots, trans, params, p, x, y, z)
        if d < best:
            best = d
            who[0] = p
    return best


def scene_sdf_batch(kinds, rots, trans, params, pts):
    """Min over primitives of their SDFs. Returns (dist (N,), nearest prim (N,) int32)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    cdef const int[::1] kv = kinds
    cdef const double[:, :, ::1] rv = rots
    cdef const double[:, ::1] tv = trans
    cdef const double[:, ::1] pv = params
    cdef const double[:, ::1] xyz = np.ascontiguousarray(pts)
    cdef Py_ssize_t n = xyz.shape[0]
    out = np.empty(n, dtype=np.float64)
    own = np.empty(n, dtype=np.int32)
    cdef double[::1] ov = out
    cdef int[::1] wv = own
    cdef Py_ssize_t i, who
    if kv.shape[0] == 0:
        out[:] = np.inf
        own[:] = -1
        return out, own
    with nogil:
        for i in range(n):
            ov[i] = _scene_dist(kv, rv, tv, pv, xyz[i, 0], xyz[i, 1], xyz[i, 2], &who)
            wv[i] = <int> who
    return out, own


def sphere_trace(kinds, rots, trans, params, origins, dirs, tmax, tol, max_steps):
    """March each ray along the scene SDF. Returns hit parameter t, -1.0 for misses."""
    cdef const int[::1] kv = kinds
    cdef const double[:, :, ::1] rv = rots
    cdef const double[:, ::1] tv = trans
    cdef const double[:, ::1] pv = params
    cdef const double[:, ::1] ov = np.ascontiguousarray(origins, dtype=np.float64)
    cdef const double[:, ::1] dv = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef Py_ssize_t n = ov.shape[0]
    out = np.full(n, -1.0, dtype=np.float64)
    cdef double[::1] res = out
    cdef double tm = tmax
    cdef double eps = tol
    cdef int steps = max_steps
    cdef Py_ssize_t i, who
    cdef int s
    cdef double t, d, x, y, z
    if kv.shape[0] == 0:
        return out
    with nogil:
        for i in range(n):
            t = 0.0
            for s in range(steps):
                x = ov[i, 0] + t * dv[i, 0]
                y = ov[i, 1] + t * dv[i, 1]
                z = ov[i, 2] + t * dv[i, 2]
                d = _scene_dist(kv, rv, tv, pv, x, y, z, &who)
                if d < eps:
                    res[i] = t
                    break
                t = t + d
                if t > tm:
                    break
    return out


def tsdf_fuse_view(values, weights, depth, fx, fy, cx, cy, rot_w2c, t_w2c, origin, voxel, mu):
    """Fuse one depth view into (values, weights) in place. See the numpy twin."""
    cdef float[:, :, ::1] val = values
    cdef float[:, :, ::1] wgt = weights
    cdef const float[:, ::1] dep = depth
    cdef const double[:, ::1] R = np.ascontiguousarray(rot_w2c, dtype=np.float64)
    cdef const double[::1] tc = np.ascontiguousarray(t_w2c, dtype=np.float64)
    cdef const double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double fx_ = fx, fy_ = fy, cx_ = cx, cy_ = cy, vox = voxel, mu_ = mu
    cdef Py_ssize_t nx = val.shape[0], ny = val.shape[1], nz = val.shape[2]
    cdef Py_ssize_t h = dep.shape[0], w = dep.shape[1]
    cdef Py_ssize_t i, j, k
    cdef long iu, iv
    cdef double wx, wy, wz, camx, camy, camz, u, v, d_obs, s, sn, wv
    with nogil:
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    wx = org[0] + (i + 0.5) * vox
                    wy = org[1] + (j + 0.5) * vox
                    wz = org[2] + (k + 0.5) * vox
                    camx = R[0, 0] * wx + R[0, 1] * wy + R[0, 2] * wz + tc[0]
                    camy = R[1, 0] * wx + R[1, 1] * wy + R[1, 2] * wz + tc[1]
                    camz = R[2, 0] * wx + R[2, 1] * wy + R[2, 2] * wz + tc[2]
                    if camz <= 1e-9:
                        continue
                    u = fx_ * camx / camz + cx_
                    v = fy_ * camy / camz + cy_
                    iu = <long> floor(u + 0.5)
                    iv = <long> floor(v + 0.5)
                    if iu < 0 or iu >= w or iv < 0 or iv >= h:
                        continue
                    d_obs = dep[iv, iu]
                    if d_obs <= 0.0:
                        continue
                    s = d_obs - camz
                    if s < -mu_:
                        continue
                    if s > mu_:
                        s = mu_
                    sn = s / mu_
                    wv = wgt[i, j, k]
                    val[i, j, k] = <float> ((wv * val[i, j, k] + sn) / (wv + 1.0))
                    wgt[i, j, k] = <float> (wv + 1.0)
