"""Observation encoders: a depth-image autoencoder and a tri-plane
feature volume over fused TSDF grids.

The autoencoder embedding is the interaction-effect space: the difference
of embeddings before and after an interaction is the self-supervised task
signal. The tri-plane encoder turns a fused grid into three axis-aligned
feature planes; local features for a 3-D point are the concatenation of
bilinear samples from each plane.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Tensor

E_DIM = 64
PLANE_G = 24
PLANE_C = 16
DEPTH_SIDE = 96
DEPTH_SCALE = 3.0  # meters mapped to unit range for the autoencoder


class DepthAutoencoder:
    """Conv encoder to an E-dim code and a mirrored upsampling decoder."""

    def __init__(self, rng, e_dim: int = E_DIM, side: int = DEPTH_SIDE):
        if side % 16:
            raise ValueError("image side must be divisible by 16")
        self.e_dim = e_dim
        self.side = side
        s = side // 16
        self.flat = 32 * s * s
        self._bottom = s
        self.enc = [
            nets.Conv2d(rng, "enc_depth.c0", 1, 8, stride=2),
            nets.Conv2d(rng, "enc_depth.c1", 8, 16, stride=2),
            nets.Conv2d(rng, "enc_depth.c2", 16, 32, stride=2),
            nets.Conv2d(rng, "enc_depth.c3", 32, 32, stride=2),
        ]
        self.enc_head = nets.Linear(rng, "enc_depth.fc", self.flat, e_dim)
        self.dec_head = nets.Linear(rng, "dec_depth.fc", e_dim, self.flat)
        self.dec = [
            nets.Conv2d(rng, "dec_depth.c0", 32, 16),
            nets.Conv2d(rng, "dec_depth.c1", 16, 8),
            nets.Conv2d(rng, "dec_depth.c2", 8, 8),
            nets.Conv2d(rng, "dec_depth.c3", 8, 1),
        ]

    def enc_params(self):
        return [p for c in self.enc for p in c.params()] + self.enc_head.params()

    def dec_params(self):
        return self.dec_head.params() + [p for c in self.dec for p in c.params()]

    def params(self):
        return self.enc_params() + self.dec_params()

    def encode_t(self, x: Tensor) -> Tensor:
        """x: (B, 1, side, side) normalized depth; returns (B, E)."""
        h = x
        for c in self.enc:
            h = ad.relu(c(h))
        h = ad.reshape(h, (x.data.shape[0], self.flat))
        return self.enc_head(h)

    def decode_t(self, z: Tensor) -> Tensor:
        b = z.data.shape[0]
        h = ad.relu(self.dec_head(z))
        h = ad.reshape(h, (b, 32, self._bottom, self._bottom))
        for i, c in enumerate(self.dec):
            h = c(nets.upsample2(h))
            if i < len(self.dec) - 1:
                h = ad.relu(h)
        return h

    def encode(self, images: np.ndarray) -> np.ndarray:
        """Inference path: (N, side, side) depth in meters -> (N, E) float32."""
        x = self._prep(images)
        return self.encode_t(Tensor(x)).data

    def _prep(self, images):
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2:
            images = images[None]
        return (images / DEPTH_SCALE)[:, None, :, :]

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        z = Tensor(self.encode(images))
        out = self.decode_t(z).data[:, 0]
        return out * DEPTH_SCALE


def train_depth_ae(ae: DepthAutoencoder, images: np.ndarray, rng,
                   steps: int = 400, batch: int = 32, lr: float = 1e-3):
    """Reconstruction training; returns [(step, mean pixel sq-err)] per step."""
    x_all = ae._prep(images)
    n = x_all.shape[0]
    params = ae.params()
    curve = []
    for step in range(steps):
        idx = rng.integers(0, n, size=min(batch, n))
        xb = Tensor(x_all[idx])
        with ad.Tape() as tape:
            z = ae.encode_t(xb)
            recon = ae.decode_t(z)
            loss = ad.mul(nets.mse_sum(recon, Tensor(xb.data)),
                          ad.const(np.float32(1.0 / xb.data.size)))
            ad.backward(tape, loss)
        ad.optimizer_step(params, lr)
        curve.append((step, float(loss.data)))
    return curve


class TriPlaneEncoder:
    """Shared conv stack applied to the three axis projections of a TSDF grid."""

    def __init__(self, rng, c: int = PLANE_C, g: int = PLANE_G, n: int = 48):
        if n != 2 * g:
            raise ValueError("plane resolution must be half the grid resolution")
        self.c = c
        self.g = g
        self.n = n
        self.stack = [
            nets.Conv2d(rng, "tri_plane.c0", 2, 16, stride=1),
            nets.Conv2d(rng, "tri_plane.c1", 16, 16, stride=2),
            nets.Conv2d(rng, "tri_plane.c2", 16, c, stride=1),
        ]

    def params(self):
        return [p for c in self.stack for p in c.params()]

    def planes_t(self, channels: np.ndarray) -> Tensor:
        """channels: (2, n, n, n) value/weight stack -> planes (3, C, G, G).

        Plane a is the mean projection along axis a; its rows index the
        first remaining axis and its columns the second.
        """
        if channels.shape != (2, self.n, self.n, self.n):
            raise ad.ShapeError(
                f"tri-plane input must be (2, {self.n}, {self.n}, {self.n}), got {channels.shape}")
        proj = np.stack([channels.mean(axis=1 + a) for a in range(3)])
        h = Tensor(proj.astype(np.float32))
        for i, conv in enumerate(self.stack):
            h = conv(h)
            if i < len(self.stack) - 1:
                h = ad.relu(h)
        return h

    def encode(self, channels: np.ndarray) -> np.ndarray:
        return self.planes_t(channels).data


_PLANE_AXES = ((1, 2), (0, 2), (0, 1))  # (row axis, column axis) per plane


def plane_coords(origin, side, g, pts):
    """Cell-center grid coordinates of world points for each plane.

    Returns per plane (i0, j0, fi, fj) ready for the bilinear gather; points
    outside the cube clamp to the border cells.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    u = (pts - np.asarray(origin)) / side  # normalized cube coords
    coord = np.clip(u * g - 0.5, 0.0, g - 1.0)
    out = []
    for ra, ca in _PLANE_AXES:
        ci = coord[:, ra]
        cj = coord[:, ca]
        i0 = np.floor(ci).astype(np.int64)
        j0 = np.floor(cj).astype(np.int64)
        out.append((i0, j0, (ci - i0).astype(np.float32), (cj - j0).astype(np.float32)))
    return out


def query_local_feature_t(planes: Tensor, origin, side, pts) -> Tensor:
    """Differentiable local feature for world points: (N, 3C)."""
    g = planes.data.shape[2]
    coords = plane_coords(origin, side, g, pts)
    feats = []
    for a, (i0, j0, fi, fj) in enumerate(coords):
        plane = ad.slice_(planes, a)
        feats.append(ad.bilerp(plane, i0, j0, fi, fj))
    return ad.concat(feats, axis=1)


def query_local_feature(planes: np.ndarray, origin, side, pts) -> np.ndarray:
    """Inference-path local features from precomputed planes (3, C, G, G)."""
    return query_local_feature_t(Tensor(planes), origin, side, pts).data
