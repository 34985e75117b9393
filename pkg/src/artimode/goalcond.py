"""Goal-conditioned mode selection.

The base model draws its latent mode from a prior at inference time, which
makes the discovered interaction a surprise. This module replaces the draw
with a small deterministic network mapping (current embedding, goal
embedding) to a latent, and fine-tunes only that network. Everything else
(autoencoder, tri-plane encoder, CVAE, heads) stays bit-frozen.

Goals are depth images of the desired final state seen from the same camera
as the current observation. During fine-tuning each successful record serves
as its own goal: the stored post-interaction embedding is the target the
selector learns to map to a latent that reproduces the recorded action.
"""

import dataclasses
import warnings

import numpy as np

from . import autodiff as ad
from . import datagen
from . import model as modelmod
from . import nets
from . import perception
from . import render
from .autodiff import Tensor


class GoalError(ValueError):
    pass


class GoalSelector:
    """MLP (e0 concat e_goal) -> z, stored as checkpoint section goal_selector."""

    def __init__(self, rng, e_dim: int, z_dim: int = modelmod.Z_DIM,
                 width: int = modelmod.HEAD_WIDTH):
        self.e_dim = e_dim
        self.z_dim = z_dim
        self.net = nets.MLP(rng, "goal_selector",
                            [2 * e_dim, width, width, z_dim])

    def params(self):
        return self.net.params()

    def state_sections(self):
        return nets.state_dict(self.params())

    def load_sections(self, sections):
        nets.load_state(self.params(), sections)

    def select_t(self, e0_t: Tensor, eg_t: Tensor) -> Tensor:
        return self.net(ad.concat([e0_t, eg_t], axis=1))

    def select(self, e0, eg) -> np.ndarray:
        """Deterministic latent for (current, goal) embedding rows."""
        e0 = np.atleast_2d(np.asarray(e0, dtype=np.float32))
        eg = np.atleast_2d(np.asarray(eg, dtype=np.float32))
        if e0.shape != eg.shape or e0.shape[1] != self.e_dim:
            raise GoalError("select: embedding shapes %r vs %r do not match "
                            "selector width %d" % (e0.shape, eg.shape, self.e_dim))
        return modelmod._np_forward(self.net, np.concatenate([e0, eg], axis=1))


@dataclasses.dataclass
class FinetuneConfig:
    steps: int = 300        # 20% of the base training budget
    batch: int = 32
    lr: float = 1e-3
    point_label_n: int = modelmod.POINT_LABEL_N
    log_every: int = 25

    def validate(self):
        if self.steps < 1 or self.batch < 1:
            raise GoalError("finetune config: steps and batch must be positive")
        if self.lr <= 0:
            raise GoalError("finetune config: lr must be positive")


_S_GOAL = 23


def finetune_goal(m, dataset, cfg: FinetuneConfig = None, seed: int = 0):
    """Train a GoalSelector on the dataset's successful records.

    All base model parameters are frozen; only the selector is stepped. The
    losses are the interaction pipeline's own (action score toward success,
    point score toward resampled labels, orientation and direction toward
    the recorded action), with the selector output in place of the CVAE
    latent. Returns (selector, curves).
    """
    if cfg is None:
        cfg = FinetuneConfig()
    cfg.validate()
    e0, e1 = dataset.embeddings()
    y = dataset.labels()
    succ = np.flatnonzero(y)
    if succ.size == 0:
        raise GoalError("finetune_goal: no successful records to learn goals from")
    rng = np.random.default_rng([seed, _S_GOAL])
    sel = GoalSelector(rng, dataset.e_dim, m.z_dim)
    e0 = e0[succ].astype(np.float32)
    eg = e1[succ].astype(np.float32)
    acts = dataset.actions()[succ].astype(np.float32)
    slot_ids_all = dataset.records[succ, datagen.REC_SLOT].astype(np.int64)
    n = succ.size
    base_params = m.params()
    sel_params = sel.params()
    curves = []
    batch = min(cfg.batch, n)
    ones = None
    for step in range(cfg.steps):
        idx = rng.choice(n, size=batch, replace=False)
        idx = idx[np.argsort(slot_ids_all[idx], kind="stable")]
        slot_ids = slot_ids_all[idx]
        lbl_rng = np.random.default_rng([seed, _S_GOAL, step])
        with ad.Tape() as tape:
            z = sel.select_t(Tensor(e0[idx]), Tensor(eg[idx]))
            planes = modelmod._batch_planes(m, dataset, slot_ids)
            v_p = modelmod._batch_features(m, dataset, slot_ids,
                                           acts[idx, :3], planes)
            if ones is None or ones.shape[0] != batch:
                ones = np.ones((batch, 1), dtype=np.float32)
            q_logit = m.q(ad.concat([v_p, z, Tensor(acts[idx])], axis=1))
            l_q = ad.mul(ad.sum_(nets.bce_with_logits(q_logit, Tensor(ones))),
                         ad.const(1.0 / batch))
            labels = modelmod._point_labels(m, v_p.data, z.data,
                                            acts[idx, :3], lbl_rng,
                                            cfg.point_label_n).astype(np.float32)
            qp_logit = m.qp(ad.concat([v_p, z], axis=1))
            l_qp = ad.mul(ad.sum_(nets.bce_with_logits(
                qp_logit, Tensor(labels[:, None]))), ad.const(1.0 / batch))
            # the same cross-record pairing the base training uses; here the
            # gradient reaches only the selector, pushing its latent away
            # from points whose recorded effect differs from the goal's
            perm = modelmod._group_shift(slot_ids)
            pair_t = modelmod.pair_targets(eg[idx] - e0[idx],
                                           eg[idx[perm]] - e0[idx[perm]])
            pair_logit = m.qp(ad.concat([ad.slice_(v_p, perm), z], axis=1))
            l_qp = ad.add(l_qp, ad.mul(ad.sum_(nets.bce_with_logits(
                pair_logit, Tensor(pair_t[:, None]))), ad.const(1.0 / batch)))
            raw = m.pi(ad.concat([v_p, z, Tensor(acts[idx, :3])], axis=1))
            r_hat = nets.normalize_rows(ad.slice_(raw, (slice(None), slice(0, 4))))
            f_hat = ad.tanh(ad.slice_(raw, (slice(None), slice(4, 7))))
            l_r, l_f = modelmod.loss_action_t(r_hat, f_hat,
                                              acts[idx, 3:7], acts[idx, 7:10])
            total = ad.add(ad.add(l_q, l_qp), ad.add(l_r, l_f))
            ad.backward(tape, total)
        ad.optimizer_step(sel_params, cfg.lr)
        ad.zero_grad(base_params)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            curves.append({"step": step, "total": float(total.data),
                           "q": float(l_q.data), "qp": float(l_qp.data),
                           "r": float(l_r.data), "f": float(l_f.data)})
    return sel, curves


def evaluate_finetune_loss(m, sel: GoalSelector, dataset,
                           point_label_n: int = modelmod.POINT_LABEL_N,
                           seed: int = 0) -> float:
    """The fine-tuning objective over the whole success set, without noise.

    Batched curves bounce with the draw, so budget comparisons (did the
    selector actually improve) measure this instead: one pass, fixed label
    rng, no sampling."""
    y = dataset.labels()
    succ = np.flatnonzero(y)
    if succ.size == 0:
        raise GoalError("evaluate_finetune_loss: no successful records")
    e0, e1 = dataset.embeddings()
    e0 = e0[succ].astype(np.float32)
    eg = e1[succ].astype(np.float32)
    acts = dataset.actions()[succ].astype(np.float32)
    slot_ids = dataset.records[succ, datagen.REC_SLOT].astype(np.int64)
    z = sel.select(e0, eg)
    feats = np.zeros((succ.size, 3 * m.tri.c), dtype=np.float32)
    side = render.GRID_N * render.VOXEL
    for s in np.unique(slot_ids):
        rows = np.nonzero(slot_ids == s)[0]
        planes = m.tri.encode(dataset.volumes[int(s)])
        feats[rows] = perception.query_local_feature(
            planes, dataset.vol_origins[int(s)], side, acts[rows, :3])
    n = succ.size
    q_logit = modelmod._np_forward(m.q, np.concatenate([feats, z, acts], axis=1))
    l_q = float(np.sum(np.maximum(q_logit, 0.0) - q_logit
                       + np.log1p(np.exp(-np.abs(q_logit))))) / n
    lbl_rng = np.random.default_rng([seed, _S_GOAL, 10**6])
    labels = modelmod._point_labels(m, feats, z, acts[:, :3], lbl_rng,
                                    point_label_n)[:, None]
    qp_logit = modelmod._np_forward(m.qp, np.concatenate([feats, z], axis=1))
    l_qp = float(np.sum(np.maximum(qp_logit, 0.0) - qp_logit * labels
                        + np.log1p(np.exp(-np.abs(qp_logit))))) / n
    raw = modelmod._np_forward(m.pi, np.concatenate([feats, z, acts[:, :3]], axis=1))
    rh = raw[:, :4] / np.maximum(np.linalg.norm(raw[:, :4], axis=1,
                                                keepdims=True), 1e-8)
    fh = np.tanh(raw[:, 4:7])
    l_r = float(np.mean(1.0 - np.abs(np.sum(rh * acts[:, 3:7], axis=1))))
    l_f = float(np.mean(np.sum((acts[:, 7:10] - fh) ** 2, axis=1)))
    return l_q + l_qp + l_r + l_f


def infer_goal_action(m, sel: GoalSelector, ae, depth, cam, channels, origin,
                      goal_depth, rng, samples=modelmod.INFER_SAMPLES,
                      temp=modelmod.INFER_TEMP):
    """As the base inference, but the latent comes from the goal selector.

    depth and goal_depth are single-view meter depth maps from the same
    camera; ae is the frozen depth autoencoder that produced the training
    embeddings.
    """
    e0 = ae.encode(np.asarray(depth)[None])
    eg = ae.encode(np.asarray(goal_depth)[None])
    z = sel.select(e0, eg)[0]
    return modelmod.infer_action(m, depth, cam, channels, origin, rng,
                                 samples=samples, temp=temp, z=z)
