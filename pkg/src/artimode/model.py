"""Generative interaction model over depth embeddings and local geometry.

A small conditional VAE explains how the scene embedding changes across an
interaction; its latent is the interaction mode. Conditioned on that latent
and on tri-plane features at a point, three heads score a full action, score
the point alone, and regress the grasp orientation and move direction for
the point. Inference draws a mode from the prior, scores visible points,
picks one by temperature softmax, then ranks sampled orientations through
the action head and executes the best.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import datagen, kinematics, nets, perception, render
from .autodiff import Tensor
from .kinematics import ActionPrimitive

Z_DIM = 8
KL_BETA = 0.1
HEAD_WIDTH = 128
POINT_LABEL_N = 100
INFER_SAMPLES = 512
INFER_POSE_SAMPLES = 64
INFER_TEMP = 0.1

_S_TRAIN = 21
_S_INFER = 22


class ModelError(ValueError):
    pass


class InteractionModel:
    """CVAE mode selector, tri-plane feature encoder, and the three heads."""

    def __init__(self, rng, e_dim=perception.E_DIM, z_dim=Z_DIM,
                 plane_c=perception.PLANE_C, plane_g=perception.PLANE_G,
                 grid_n=render.GRID_N, width=HEAD_WIDTH):
        self.e_dim = int(e_dim)
        self.z_dim = int(z_dim)
        self.v_dim = 3 * int(plane_c)
        self.tri = perception.TriPlaneEncoder(rng, c=plane_c, g=plane_g, n=grid_n)
        self.enc = nets.MLP(rng, "cvae.enc", [2 * e_dim, width, width, 2 * z_dim])
        self.dec = nets.MLP(rng, "cvae.dec", [z_dim + e_dim, width, width, e_dim])
        self.q = nets.MLP(rng, "heads.q", [self.v_dim + z_dim + 10, width, width, 1])
        self.qp = nets.MLP(rng, "heads.qp", [self.v_dim + z_dim, width, width, 1])
        self.pi = nets.MLP(rng, "heads.pi", [self.v_dim + z_dim + 3, width, width, 7])

    def cvae_params(self):
        return self.enc.params() + self.dec.params()

    def head_params(self):
        return self.q.params() + self.qp.params() + self.pi.params()

    def params(self):
        return self.tri.params() + self.cvae_params() + self.head_params()

    def state_sections(self):
        return nets.state_dict(self.params())

    def load_sections(self, sections):
        nets.load_state(self.params(), sections)


def _np_forward(mlp, x):
    """Plain numpy forward through an MLP, no tape."""
    x = np.asarray(x, dtype=np.float32)
    for i, layer in enumerate(mlp.layers):
        x = x @ layer.w.data + layer.b.data
        if i < len(mlp.layers) - 1:
            x = np.maximum(x, 0.0)
    return x


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


# ---------------------------------------------------------------------------
# CVAE

def cvae_forward_t(m: InteractionModel, e0: Tensor, e1: Tensor, eta: np.ndarray):
    """Reparameterized posterior draw plus reconstruction, on the tape."""
    stats = m.enc(ad.concat([e0, e1], axis=1))
    mu = ad.slice_(stats, (slice(None), slice(0, m.z_dim)))
    logvar = ad.slice_(stats, (slice(None), slice(m.z_dim, 2 * m.z_dim)))
    sigma = ad.exp(ad.mul(logvar, ad.const(0.5)))
    z = ad.add(mu, ad.mul(sigma, Tensor(eta.astype(np.float32))))
    e1_hat = m.dec(ad.concat([z, e0], axis=1))
    return z, e1_hat, mu, logvar


def cvae_forward(m: InteractionModel, e0, e1, rng):
    """Numpy wrapper: returns (z, e1_hat, mu, sigma) for a batch."""
    e0 = np.atleast_2d(np.asarray(e0, dtype=np.float32))
    e1 = np.atleast_2d(np.asarray(e1, dtype=np.float32))
    eta = rng.standard_normal((e0.shape[0], Z_DIM))
    with ad.Tape():
        z, e1_hat, mu, logvar = cvae_forward_t(_as_model(m), Tensor(e0), Tensor(e1), eta)
        return (z.data.copy(), e1_hat.data.copy(), mu.data.copy(),
                np.exp(0.5 * logvar.data))


def _as_model(m):
    if not isinstance(m, InteractionModel):
        raise ModelError("expected an InteractionModel")
    return m


def loss_cvae_t(e1_hat: Tensor, e1: Tensor, mu: Tensor, logvar: Tensor,
                beta: float = KL_BETA) -> Tensor:
    """Reconstruction plus beta-weighted KL, averaged over the batch."""
    b = e1.shape[0]
    recon = nets.mse_sum(e1_hat, e1)
    kl = nets.kl_standard_normal(mu, logvar)
    return ad.mul(ad.add(recon, ad.mul(kl, ad.const(beta))), ad.const(1.0 / b))


def loss_cvae(e1_hat, e1, mu, sigma, beta: float = KL_BETA) -> float:
    """Numpy evaluation on one sample or a batch (mean over the batch)."""
    e1_hat = np.atleast_2d(np.asarray(e1_hat, dtype=np.float64))
    e1 = np.atleast_2d(np.asarray(e1, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    recon = np.sum((e1_hat - e1) ** 2)
    kl = 0.5 * np.sum(mu ** 2 + sigma ** 2 - 1.0 - 2.0 * np.log(sigma))
    return float((recon + beta * kl) / e1.shape[0])


# ---------------------------------------------------------------------------
# heads

def _q_input(v_p, z, a):
    return np.concatenate([v_p, z, a], axis=1).astype(np.float32)


def q_score(m: InteractionModel, v_p, z, a):
    """Success probability of action a at a point, strictly in (0, 1)."""
    v_p = np.atleast_2d(np.asarray(v_p, dtype=np.float32))
    z = np.atleast_2d(np.asarray(z, dtype=np.float32))
    a = np.atleast_2d(np.asarray(a, dtype=np.float32))
    logit = _np_forward(m.q, _q_input(v_p, z, a))
    return _sigmoid(logit[:, 0])


def point_score(m: InteractionModel, v_p, z):
    v_p = np.atleast_2d(np.asarray(v_p, dtype=np.float32))
    z = np.atleast_2d(np.asarray(z, dtype=np.float32))
    logit = _np_forward(m.qp, np.concatenate([v_p, z], axis=1))
    return _sigmoid(logit[:, 0])


def _random_orientations(rng, n):
    """Uniform unit quaternions (w >= 0) and uniform unit directions."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1.0
    f = rng.normal(size=(n, 3))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    return q, f


def point_label(m: InteractionModel, v_p, z, p, rng, n=POINT_LABEL_N):
    """Constant training target for the point score: the best success
    probability over n orientation/direction proposals at that point."""
    if n < 1:
        raise ModelError("point_label: n must be >= 1")
    v_p = np.asarray(v_p, dtype=np.float32).reshape(1, -1)
    z = np.asarray(z, dtype=np.float32).reshape(1, -1)
    p = np.asarray(p, dtype=np.float32).reshape(1, 3)
    return float(_point_labels(m, v_p, z, p, rng, n)[0])


def _point_labels(m, v_p, z, p, rng, n):
    """Batched point labels: rows of (v_p, z, p), one shared proposal rng."""
    rows = v_p.shape[0]
    quats, dirs = _random_orientations(rng, rows * n)
    acts = np.concatenate([np.repeat(p, n, axis=0), quats, dirs], axis=1)
    ys = q_score(m, np.repeat(v_p, n, axis=0), np.repeat(z, n, axis=0), acts)
    return ys.reshape(rows, n).max(axis=1)


# ---------------------------------------------------------------------------
# orientation/direction loss

def loss_action_t(r_hat: Tensor, f_hat: Tensor, r: np.ndarray, f: np.ndarray):
    """Rotation and direction terms on the tape, each a batch-mean scalar.

    The rotation term uses the absolute quaternion dot, so either sign of a
    target quaternion scores the same.
    """
    b = r.shape[0]
    rt = Tensor(r.astype(np.float32))
    ft = Tensor(f.astype(np.float32))
    dot = ad.sum_(ad.mul(r_hat, rt), axis=1)
    ones = Tensor(np.ones(b, dtype=np.float32))
    l_r = ad.mul(ad.sum_(ad.add(ones, ad.mul(nets.abs_(dot), ad.const(-1.0)))),
                 ad.const(1.0 / b))
    diff = f_hat - ft
    l_f = ad.mul(ad.sum_(ad.mul(diff, diff)), ad.const(1.0 / b))
    return l_r, l_f


def loss_action(r, f, r_hat, f_hat):
    """Numpy evaluation for one pair: (f - f_hat)^2 summed + (1 - |r . r_hat|)."""
    r = np.asarray(r, dtype=np.float64).reshape(4)
    r_hat = np.asarray(r_hat, dtype=np.float64).reshape(4)
    f = np.asarray(f, dtype=np.float64).reshape(3)
    f_hat = np.asarray(f_hat, dtype=np.float64).reshape(3)
    for quat in (r, r_hat):
        if abs(np.linalg.norm(quat) - 1.0) > 1e-5:
            raise ModelError("loss_action: quaternion must be unit")
    return float(np.sum((f - f_hat) ** 2) + (1.0 - abs(np.dot(r, r_hat))))


# ---------------------------------------------------------------------------
# joint training

@dataclass
class TrainConfig:
    steps: int = 1500
    batch: int = 32
    lr: float = 1e-3
    beta: float = KL_BETA
    point_label_n: int = POINT_LABEL_N
    log_every: int = 25

    def validate(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def _batch_planes(m, dataset, slot_ids):
    """Tri-plane tensors for each distinct slot in the batch, on the tape."""
    planes = {}
    for s in np.unique(slot_ids):
        planes[int(s)] = m.tri.planes_t(dataset.volumes[int(s)])
    return planes


def _batch_features(m, dataset, slot_ids, pts, planes):
    side = render.GRID_N * render.VOXEL
    feats = []
    for s in np.unique(slot_ids):
        rows = np.nonzero(slot_ids == s)[0]
        feats.append(perception.query_local_feature_t(
            planes[int(s)], dataset.vol_origins[int(s)], side, pts[rows]))
    return ad.concat(feats, axis=0)


def _group_shift(groups):
    """Permutation rotating each contiguous run of equal values by one.

    Pairs every row with a different row of the same group when the group
    has at least two members; singletons pair with themselves.
    """
    perm = np.arange(groups.size)
    start = 0
    for g in range(1, groups.size + 1):
        if g == groups.size or groups[g] != groups[start]:
            perm[start:g] = np.roll(perm[start:g], 1)
            start = g
    return perm


def pair_targets(eff_a, eff_b):
    """Soft same-mode target for record pairs: clipped cosine of their
    embedding-space effects. Near one for interactions that changed the
    scene the same way, near zero for unrelated or opposite changes."""
    a = np.asarray(eff_a, dtype=np.float32)
    b = np.asarray(eff_b, dtype=np.float32)
    a = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-8)
    b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-8)
    return np.clip(np.sum(a * b, axis=1), 0.0, 1.0).astype(np.float32)


def train(m: InteractionModel, dataset, cfg: TrainConfig, seed=0):
    """Joint minimization of the five losses; returns the loss curves.

    The depth autoencoder stays frozen (embeddings are read from the
    dataset records); the tri-plane encoder, the CVAE, and all heads train
    together. The orientation loss only sees successful records, since
    failures carry no pose target; the point score trains on every record
    so that dead regions hold the surface down.
    """
    cfg.validate()
    if dataset.records.shape[0] == 0:
        raise ModelError("train: empty dataset")
    rng = np.random.default_rng([seed, _S_TRAIN])
    e0, e1 = dataset.embeddings()
    y = dataset.labels().astype(np.float32)
    acts = dataset.actions().astype(np.float32)
    slot_ids_all = dataset.records[:, datagen.REC_SLOT].astype(np.int64)
    n = e0.shape[0]
    if not y.any():
        warnings.warn("train: no successful records; point and orientation "
                      "heads receive no signal")
    params = m.params()
    curves = []
    batch = min(cfg.batch, n)
    for step in range(cfg.steps):
        idx = rng.choice(n, size=batch, replace=False)
        idx = idx[np.argsort(slot_ids_all[idx], kind="stable")]
        slot_ids = slot_ids_all[idx]
        succ_rows = np.nonzero(y[idx] > 0.5)[0]
        eta = rng.standard_normal((batch, m.z_dim))
        lbl_rng = np.random.default_rng([seed, _S_TRAIN, step])
        with ad.Tape() as tape:
            e0_t, e1_t = Tensor(e0[idx]), Tensor(e1[idx])
            z, e1_hat, mu, logvar = cvae_forward_t(m, e0_t, e1_t, eta)
            l_cvae = loss_cvae_t(e1_hat, e1_t, mu, logvar, cfg.beta)
            planes = _batch_planes(m, dataset, slot_ids)
            v_p = _batch_features(m, dataset, slot_ids, acts[idx, :3], planes)
            q_logit = m.q(ad.concat([v_p, z, Tensor(acts[idx])], axis=1))
            l_q = ad.mul(ad.sum_(nets.bce_with_logits(
                q_logit, Tensor(y[idx][:, None]))), ad.const(1.0 / batch))
            total = ad.add(l_cvae, l_q)
            comps = {"cvae": float(l_cvae.data), "q": float(l_q.data),
                     "qp": 0.0, "r": 0.0, "f": 0.0}
            # the point head trains on every record: failure points anchor
            # the score surface low, success points inherit the best success
            # probability the action head sees over sampled orientations
            labels = _point_labels(m, v_p.data, z.data, acts[idx, :3],
                                   lbl_rng, cfg.point_label_n).astype(np.float32)
            qp_logit = m.qp(ad.concat([v_p, z], axis=1))
            l_qp = ad.mul(ad.sum_(nets.bce_with_logits(
                qp_logit, Tensor(labels[:, None]))), ad.const(1.0 / batch))
            total = ad.add(total, l_qp)
            comps["qp"] = float(l_qp.data)
            if succ_rows.size:
                sv = ad.slice_(v_p, succ_rows)
                sz = ad.slice_(z, succ_rows)
                # swap points between same-slot records so the point head
                # learns which points belong to which latent; the target is
                # the records' effect similarity, so unrelated interactions
                # become negatives without any ground-truth mode labels
                perm = _group_shift(slot_ids[succ_rows])
                pair_t = pair_targets(
                    e1[idx[succ_rows]] - e0[idx[succ_rows]],
                    e1[idx[succ_rows][perm]] - e0[idx[succ_rows][perm]])
                pair_logit = m.qp(ad.concat([ad.slice_(sv, perm), sz], axis=1))
                l_pair = ad.mul(ad.sum_(nets.bce_with_logits(
                    pair_logit, Tensor(pair_t[:, None]))),
                    ad.const(1.0 / succ_rows.size))
                raw = m.pi(ad.concat([sv, sz,
                                      Tensor(acts[idx[succ_rows], :3])], axis=1))
                r_hat = nets.normalize_rows(ad.slice_(raw, (slice(None), slice(0, 4))))
                f_hat = ad.tanh(ad.slice_(raw, (slice(None), slice(4, 7))))
                l_r, l_f = loss_action_t(r_hat, f_hat,
                                         acts[idx[succ_rows], 3:7],
                                         acts[idx[succ_rows], 7:10])
                total = ad.add(ad.add(total, l_pair), ad.add(l_r, l_f))
                comps.update(qp=comps["qp"] + float(l_pair.data),
                             r=float(l_r.data), f=float(l_f.data))
            ad.backward(tape, total)
        ad.optimizer_step(params, cfg.lr)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            curves.append({"step": step, "total": float(total.data), **comps})
    return curves


# ---------------------------------------------------------------------------
# inference

def _pick_point(scores, temp, rng):
    scores = np.asarray(scores, dtype=np.float64)
    if temp <= 0.0:
        return int(np.argmax(scores))
    s = scores / temp
    s -= s.max()
    p = np.exp(s)
    p /= p.sum()
    return int(rng.choice(scores.size, p=p))


def predict_pose(m: InteractionModel, v_p, z, p):
    """Orientation and direction from the point head, normalized for use."""
    v_p = np.atleast_2d(np.asarray(v_p, dtype=np.float32))
    z = np.atleast_2d(np.asarray(z, dtype=np.float32))
    p = np.atleast_2d(np.asarray(p, dtype=np.float32))
    raw = _np_forward(m.pi, np.concatenate([v_p, z, p], axis=1))
    quat = raw[:, :4].astype(np.float64)
    norms = np.linalg.norm(quat, axis=1, keepdims=True)
    quat = np.where(norms > 1e-8, quat / np.maximum(norms, 1e-8),
                    np.array([1.0, 0, 0, 0]))
    quat[quat[:, 0] < 0] *= -1.0
    f = np.tanh(raw[:, 4:7].astype(np.float64))
    fn = np.linalg.norm(f, axis=1, keepdims=True)
    f = np.where(fn > 1e-6, f / np.maximum(fn, 1e-6), np.array([0.0, 0, 1.0]))
    return quat, f


def infer_action(m: InteractionModel, depth, cam, channels, origin, rng,
                 samples=INFER_SAMPLES, temp=INFER_TEMP, z=None,
                 pose_samples=INFER_POSE_SAMPLES):
    """Mode from the prior, point by temperature softmax over point scores,
    pose by ranking sampled orientations with the action head. The point
    head's own regression competes as one of the candidates, so the chosen
    pose is never worse than the direct prediction in the head's eyes.
    Returns the action and per-point diagnostics.

    Passing ``z`` overrides the prior draw; the goal-conditioned path uses
    this to inject its selector output."""
    pts, pix = render.depth_to_pointcloud(depth, cam)
    if pts.shape[0] == 0:
        raise ModelError("infer_action: empty point cloud")
    if pts.shape[0] > samples:
        keep = rng.choice(pts.shape[0], size=samples, replace=False)
        pts, pix = pts[keep], pix[keep]
    # the same jitter the exploration policy applies to its contact points,
    # so candidates cover the niches the training actions came from
    pts = pts + rng.normal(scale=0.005, size=pts.shape)
    if z is None:
        z = rng.standard_normal(m.z_dim).astype(np.float32)
    else:
        z = np.asarray(z, dtype=np.float32).reshape(m.z_dim)
    planes = m.tri.encode(channels)
    side = render.GRID_N * render.VOXEL
    v_p = perception.query_local_feature(planes, origin, side, pts)
    zs = np.tile(z, (pts.shape[0], 1))
    scores = point_score(m, v_p, zs)
    chosen = _pick_point(scores, temp, rng)
    p = pts[chosen]
    quat, f = predict_pose(m, v_p[chosen], z, p)
    if pose_samples > 0:
        qs, fs = _random_orientations(rng, pose_samples)
        quat = np.concatenate([quat, qs])
        f = np.concatenate([f, fs])
    cand = np.concatenate([np.tile(p, (quat.shape[0], 1)), quat, f], axis=1)
    ys = q_score(m, np.tile(v_p[chosen], (quat.shape[0], 1)),
                 np.tile(z, (quat.shape[0], 1)), cand)
    best = int(np.argmax(ys))
    act = ActionPrimitive(p=p, rot=kinematics.quat_to_mat(quat[best]),
                          f=f[best])
    diag = {"points": pts, "pix": pix, "scores": scores, "chosen": chosen,
            "z": z, "pose_rank": ys}
    return act, diag
