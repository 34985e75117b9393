"""Depth rendering and volumetric fusion over the signed-distance scenes.

Cameras follow the usual computer-vision convention: x right, y down,
z forward, pixel (u, v) maps to the ray through ((u-cx)/fx, (v-cy)/fy, 1).
Depth images store camera-space z in meters with 0 marking a miss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, kinematics

MAX_STEPS = 128
HIT_TOL = 1e-4
FAR = 3.0

GRID_N = 48
GRID_SIDE = 1.2
VOXEL = GRID_SIDE / GRID_N
TRUNC = 0.1

VIEW_YAWS_DEG = (-45.0, -22.5, 0.0, 22.5, 45.0)


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class Camera:
    rot: np.ndarray  # (3, 3) camera-to-world
    pos: np.ndarray  # (3,) eye in world
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rot, dtype=np.float64).reshape(3, 3).copy()
        r.flags.writeable = False
        object.__setattr__(self, "rot", r)
        p = np.asarray(self.pos, dtype=np.float64).reshape(3).copy()
        p.flags.writeable = False
        object.__setattr__(self, "pos", p)

    def rays(self):
        """World-frame unit directions for every pixel, row-major, plus z scale.

        Returns (dirs (H*W, 3), dz (H*W,)) where dz converts ray length to
        camera z: depth = t * dz.
        """
        u = np.arange(self.width, dtype=np.float64)
        v = np.arange(self.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        x = (uu - self.cx) / self.fx
        y = (vv - self.cy) / self.fy
        d_cam = np.stack([x, y, np.ones_like(x)], axis=-1).reshape(-1, 3)
        norms = np.linalg.norm(d_cam, axis=1, keepdims=True)
        d_cam /= norms
        dirs = d_cam @ self.rot.T
        return dirs, d_cam[:, 2].copy()

    def world_to_cam(self):
        """(R, t) such that x_cam = R @ x_world + t."""
        r = self.rot.T
        return r, -(r @ self.pos)

    def project(self, pts):
        """Pixel coordinates and camera z for world points; no rounding."""
        r, t = self.world_to_cam()
        cam = pts @ r.T + t
        z = cam[:, 2]
        u = self.fx * cam[:, 0] / z + self.cx
        v = self.fy * cam[:, 1] / z + self.cy
        return u, v, z


def look_at(eye, target, width=96, height=96, fov_deg=60.0):
    """Camera at eye with optical axis through target, world z up in frame."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-9:
        raise RenderError("camera eye coincides with target")
    z_c = fwd / n
    up = np.array([0.0, 0.0, 1.0])
    x_c = np.cross(z_c, up)
    xn = np.linalg.norm(x_c)
    if xn < 1e-9:
        # looking straight down; pick a stable right vector
        x_c = np.array([1.0, 0.0, 0.0])
    else:
        x_c = x_c / xn
    y_c = np.cross(z_c, x_c)
    rot = np.stack([x_c, y_c, z_c], axis=1)
    f = (width / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
    return Camera(rot, eye, f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def default_views(obj, width=96, height=96, radius=None):
    """Five cameras on an arc in front of the object, all aimed at its centroid.

    The arc is centered on the +y face; the end yaws mirror each other so a
    laterally symmetric object produces mirrored depth images. The arc
    radius tracks the object size unless given explicitly.
    """
    c = kinematics.centroid(obj)
    if radius is None:
        lo, hi = kinematics.aabb(obj)
        radius = float(np.clip(1.3 * np.linalg.norm(hi - lo), 0.5, 1.0))
    cams = []
    for yaw in VIEW_YAWS_DEG:
        a = np.deg2rad(yaw)
        eye = c + np.array([radius * np.sin(a), radius * np.cos(a), radius * 0.39])
        cams.append(look_at(eye, c, width, height))
    return cams


def render_depth(obj, cam, max_steps=MAX_STEPS, tol=HIT_TOL, far=FAR):
    """Sphere-traced depth image (H, W) float32; 0 where the ray misses."""
    kinds, rots, trans, params, _ = kinematics.primitive_soup(obj)
    dirs, dz = cam.rays()
    origins = np.broadcast_to(cam.pos, dirs.shape)
    t = _kernels.sphere_trace(kinds, rots, trans, params,
                              np.ascontiguousarray(origins), dirs, far, tol, max_steps)
    depth = np.where(t >= 0.0, t * dz, 0.0)
    return depth.reshape(cam.height, cam.width).astype(np.float32)


def depth_to_pointcloud(depth, cam):
    """World points for every hit pixel; returns (points (N, 3), pixel (N, 2) as (v, u))."""
    depth = np.asarray(depth)
    vv, uu = np.nonzero(depth > 0)
    z = depth[vv, uu].astype(np.float64)
    x = (uu - cam.cx) / cam.fx * z
    y = (vv - cam.cy) / cam.fy * z
    cam_pts = np.stack([x, y, z], axis=1)
    pts = cam_pts @ cam.rot.T + cam.pos
    return pts, np.stack([vv, uu], axis=1)


@dataclass
class TSDFVolume:
    """Truncated signed distance grid with per-voxel fusion weights."""

    origin: np.ndarray
    n: int = GRID_N
    voxel: float = VOXEL
    trunc: float = TRUNC
    values: np.ndarray = field(default=None)
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.values is None:
            self.values = np.ones((self.n, self.n, self.n), dtype=np.float32)
        if self.weights is None:
            self.weights = np.zeros((self.n, self.n, self.n), dtype=np.float32)

    def fuse(self, depth, cam):
        r, t = cam.world_to_cam()
        _kernels.tsdf_fuse_view(self.values, self.weights,
                                np.ascontiguousarray(depth, dtype=np.float32),
                                cam.fx, cam.fy, cam.cx, cam.cy,
                                np.ascontiguousarray(r), np.ascontiguousarray(t),
                                self.origin, self.voxel, self.trunc)

    def channels(self):
        """(2, n, n, n) float32 stack of values and weights."""
        return np.stack([self.values, self.weights])


def volume_for(obj, n=GRID_N, side=GRID_SIDE, trunc=TRUNC):
    """Empty grid, a side-length cube centered on the object centroid."""
    c = kinematics.centroid(obj)
    origin = c - side / 2.0
    return TSDFVolume(origin=origin, n=n, voxel=side / n, trunc=trunc)


def fuse_views(obj, cams, **grid_kw):
    vol = volume_for(obj, **grid_kw)
    for cam in cams:
        vol.fuse(render_depth(obj, cam), cam)
    return vol


# ---------------------------------------------------------------------------
# image files

def write_pgm(path, depth, scale=1000.0):
    """16-bit binary PGM, depth in millimeters, big-endian per the format."""
    depth = np.asarray(depth)
    mm = np.clip(np.round(depth * scale), 0, 65535).astype(">u2")
    header = b"P5\n%d %d\n65535\n" % (depth.shape[1], depth.shape[0])
    with open(path, "wb") as f:
        f.write(header)
        f.write(mm.tobytes())


def read_pgm(path, scale=1000.0):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise RenderError("%s is not a binary PGM" % (path,))
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 65535:
        raise RenderError("expected 16-bit PGM, got maxval %d" % (maxval,))
    px = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos)
    return (px.reshape(h, w).astype(np.float32)) / scale


def write_ppm(path, rgb):
    """Binary PPM from an (H, W, 3) uint8 array."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    header = b"P6\n%d %d\n255\n" % (rgb.shape[1], rgb.shape[0])
    with open(path, "wb") as f:
        f.write(header)
        f.write(rgb.tobytes())


def heatmap_rgb(values, depth=None):
    """Score-per-pixel heatmap: blue low to red high, grey background.

    values is (H, W) with NaN where no score exists; depth, when given,
    shades the background by normalized depth so the object stays legible.
    """
    h, w = values.shape
    rgb = np.full((h, w, 3), 60, dtype=np.uint8)
    if depth is not None:
        d = np.asarray(depth, dtype=np.float64)
        hit = d > 0
        if hit.any():
            lo, hi = d[hit].min(), d[hit].max()
            span = hi - lo if hi > lo else 1.0
            shade = (80 + 120 * (1.0 - (d - lo) / span)).astype(np.uint8)
            for ch in range(3):
                rgb[..., ch] = np.where(hit, shade, rgb[..., ch])
    mask = np.isfinite(values)
    if mask.any():
        v = values[mask]
        lo, hi = v.min(), v.max()
        span = hi - lo if hi > lo else 1.0
        t = (values - lo) / span
        r = np.clip(255 * t, 0, 255)
        b = np.clip(255 * (1.0 - t), 0, 255)
        g = np.clip(255 * (1.0 - np.abs(t - 0.5) * 2), 0, 255) * 0.6
        rgb[mask, 0] = r[mask].astype(np.uint8)
        rgb[mask, 1] = g[mask].astype(np.uint8)
        rgb[mask, 2] = b[mask].astype(np.uint8)
    return rgb
