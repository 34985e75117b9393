"""Self-supervised interaction data collection.

The loop: execute random interactions against procedurally reset scenes,
embed the depth images before and after, call an interaction successful
when the embedding shifted by at least a threshold, fit a Gaussian mixture
over the successful action vectors per (instance, state), and in later
rounds mix mixture draws with fresh random actions so rare modes get
progressively denser coverage.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import container, kinematics, nets, perception, render
from .kinematics import ActionPrimitive

SOURCE_RANDOM = 0
SOURCE_GMM = 1

# per-record row layout (float32): ids, action, labels, both embeddings
REC_SLOT = 0
REC_CAM = 1
REC_ROUND = 2
REC_SOURCE = 3
REC_A = 4            # ..REC_A+10
REC_YHAT = 14
REC_MODE_JOINT = 15  # -1 when the interaction failed
REC_MODE_SIGN = 16
REC_E0 = 17          # ..REC_E0+E, then e1 follows


def record_width(e_dim):
    return REC_E0 + 2 * e_dim


# rng stream ids (first element after the user seed)
_S_EPISODE = 11
_S_GMM = 12
_S_AE = 13
_S_PROBE = 14


@dataclass(frozen=True)
class Slot:
    """One (object instance, initial state) cell of the collection roster."""
    category: str
    variant: int
    fractions: tuple

    def build(self):
        return kinematics.make_object(self.category, self.variant, self.fractions)


@dataclass
class CollectConfig:
    rounds: int = 4
    m: int = 400
    eps: float = 0.3
    k: int = 6
    lam: float | None = None     # preset threshold; None derives it from round 0
    lam_pct: float = 80.0        # percentile of round-0 effect norms
    e_dim: int = perception.E_DIM
    width: int = 96
    height: int = 96
    ae_steps: int = 400
    ae_batch: int = 32
    ae_lr: float = 1e-3
    ae_corpus_cap: int = 256

    def validate(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must be in [0, 1]")
        if self.m < 1:
            raise ValueError("m must be positive")


@dataclass
class Dataset:
    manifest: dict
    slot_texts: list
    d0: np.ndarray          # (S, V, H, W) depth per slot and view
    volumes: np.ndarray     # (S, 2, n, n, n) fused value/weight grids
    vol_origins: np.ndarray  # (S, 3) world origin of each slot's grid
    records: np.ndarray     # (N, record_width) float32
    d1: np.ndarray          # (N, H, W)
    ae_state: dict          # autoencoder parameter sections

    @property
    def e_dim(self):
        return int(self.manifest["e_dim"])

    def embeddings(self):
        e = self.e_dim
        return (self.records[:, REC_E0:REC_E0 + e],
                self.records[:, REC_E0 + e:REC_E0 + 2 * e])

    def actions(self):
        return self.records[:, REC_A:REC_A + 10]

    def labels(self):
        return self.records[:, REC_YHAT].astype(bool)


# ---------------------------------------------------------------------------
# policies

def random_policy(obj, pointcloud, rng) -> ActionPrimitive:
    """Uniform exploration: a jittered visible surface point, a uniform
    orientation, and a uniform move direction of non-trivial length."""
    pointcloud = np.asarray(pointcloud, dtype=np.float64)
    if pointcloud.ndim != 2 or pointcloud.shape[0] == 0:
        raise ValueError("random_policy: empty point cloud")
    p = pointcloud[int(rng.integers(pointcloud.shape[0]))] + rng.normal(scale=0.005, size=3)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    rot = kinematics.quat_to_mat(q)
    while True:
        f = rng.uniform(-1.0, 1.0, size=3)
        if np.linalg.norm(f) >= 0.1:
            break
    return ActionPrimitive(p=p, rot=rot, f=f)


def label_effect(e0, e1, lam):
    """Effect vector and success bit: moved at least lam in embedding space."""
    e0 = np.asarray(e0, dtype=np.float32)
    e1 = np.asarray(e1, dtype=np.float32)
    if e0.shape != e1.shape:
        raise ValueError(f"label_effect: embedding shapes differ {e0.shape} vs {e1.shape}")
    tau = e1 - e0
    return tau, bool(np.linalg.norm(tau) >= lam)


def select_threshold(norms, pct=80.0):
    """Effect-norm threshold from a random probe batch.

    A percentile of observed shifts, kept off the noise floor: on a
    noiseless renderer most failed probes shift by exactly zero, which
    would drive a bare percentile to zero and label everything a success.
    """
    norms = np.asarray(norms, dtype=np.float64)
    if norms.size == 0:
        return 1e-6
    pct = float(np.percentile(norms, pct))
    return max(pct, 0.05 * float(norms.max()), 1e-6)


# ---------------------------------------------------------------------------
# Gaussian mixture over successful action vectors

VAR_FLOOR = 1e-6
EM_TOL = 1e-6
EM_MAX_ITERS = 200


@dataclass
class GMMParams:
    weights: np.ndarray    # (K,)
    means: np.ndarray      # (K, D)
    variances: np.ndarray  # (K, D), diagonal, floored
    loglik: list = field(default_factory=list)

    def validate(self):
        if abs(float(self.weights.sum()) - 1.0) > 1e-6:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances < VAR_FLOOR * (1 - 1e-9)):
            raise ValueError("variance below floor")


def _log_gauss(x, means, variances):
    # (N, K) log density of diagonal Gaussians
    d = x.shape[1]
    diff = x[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    logdet = np.sum(np.log(variances), axis=1)
    return -0.5 * (quad + logdet[None, :] + d * np.log(2 * np.pi))


def _kmeanspp(x, k, rng):
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(x[int(rng.integers(n))])
            continue
        r = rng.random() * total
        centers.append(x[int(np.searchsorted(np.cumsum(d2), r))])
    return np.stack(centers)


def fit_gmm(actions, k, rng, max_iters=EM_MAX_ITERS, tol=EM_TOL) -> GMMParams:
    """Diagonal-covariance EM over action vectors.

    k is reduced (with a warning) when there are fewer points than
    components. The log-likelihood curve is recorded per iteration and is
    non-decreasing.
    """
    x = np.asarray(actions, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("fit_gmm: need a non-empty (N, D) action array")
    n, d = x.shape
    if n < k:
        warnings.warn(f"fit_gmm: only {n} points for {k} components, reducing k")
        k = n
    means = _kmeanspp(x, k, rng)
    base_var = np.maximum(x.var(axis=0), VAR_FLOOR)
    variances = np.tile(base_var, (k, 1))
    weights = np.full(k, 1.0 / k)
    curve = []
    prev = -np.inf
    for _ in range(max_iters):
        logp = _log_gauss(x, means, variances) + np.log(weights)[None, :]
        mx = logp.max(axis=1, keepdims=True)
        lse = mx.squeeze(1) + np.log(np.sum(np.exp(logp - mx), axis=1))
        ll = float(lse.sum())
        curve.append(ll)
        resp = np.exp(logp - lse[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 1e-12
        weights = np.where(alive, nk / n, 1e-12)
        weights = weights / weights.sum()
        means = np.where(alive[:, None],
                         (resp.T @ x) / np.maximum(nk[:, None], 1e-12), means)
        ex2 = (resp.T @ (x * x)) / np.maximum(nk[:, None], 1e-12)
        variances = np.where(alive[:, None],
                             np.maximum(ex2 - means * means, VAR_FLOOR), variances)
        if ll - prev < tol and np.isfinite(prev):
            break
        prev = ll
    return GMMParams(weights=weights, means=means, variances=variances, loglik=curve)


# The simulator is deterministic, so redrawing an already seen action always
# repeats its outcome and refitting on such clones collapses the mixture onto
# the variance floor. Mixture-sourced proposals are therefore smoothed a
# little, which keeps the collection exploring around past successes.
EXPLORE_P_SIGMA = 0.02
EXPLORE_Q_SIGMA = 0.05
EXPLORE_F_SIGMA = 0.1


def smooth_action(act: ActionPrimitive, rng) -> ActionPrimitive:
    v = act.as_vector().astype(np.float64)
    v[0:3] += rng.normal(0.0, EXPLORE_P_SIGMA, 3)
    v[3:7] += rng.normal(0.0, EXPLORE_Q_SIGMA, 4)
    v[7:10] = np.clip(v[7:10] + rng.normal(0.0, EXPLORE_F_SIGMA, 3), -1.0, 1.0)
    if np.linalg.norm(v[3:7]) < 1e-9:
        v[3] = 1.0
    if np.linalg.norm(v[7:10]) < 1e-6:
        v[9] = 1.0
    return ActionPrimitive.from_vector(v)


def sample_gmm(params: GMMParams, rng) -> ActionPrimitive:
    """One draw: categorical component, then its diagonal Gaussian."""
    comp = int(np.searchsorted(np.cumsum(params.weights), rng.random()))
    comp = min(comp, len(params.weights) - 1)
    v = params.means[comp] + np.sqrt(params.variances[comp]) * rng.normal(size=params.means.shape[1])
    v[7:10] = np.clip(v[7:10], -1.0, 1.0)
    if np.linalg.norm(v[3:7]) < 1e-9:
        v[3] = 1.0
    if np.linalg.norm(v[7:10]) < 1e-6:
        v[9] = 1.0
    return ActionPrimitive.from_vector(v)


def gmm_to_array(params: GMMParams) -> np.ndarray:
    return np.concatenate([params.weights[:, None], params.means, params.variances],
                          axis=1).astype(np.float32)


def gmm_from_array(arr) -> GMMParams:
    arr = np.asarray(arr, dtype=np.float64)
    d = (arr.shape[1] - 1) // 2
    return GMMParams(weights=arr[:, 0].copy(), means=arr[:, 1:1 + d].copy(),
                     variances=arr[:, 1 + d:].copy())


# ---------------------------------------------------------------------------
# episode execution

def _episode(obj, cams, clouds, seed, slot_idx, round_idx, ep_idx, source, gmm):
    rng = np.random.default_rng([seed, _S_EPISODE, slot_idx, round_idx, ep_idx])
    cam_id = int(rng.integers(len(cams)))
    if source == SOURCE_GMM and gmm is not None:
        act = smooth_action(sample_gmm(gmm, rng), rng)
    else:
        source = SOURCE_RANDOM
        act = random_policy(obj, clouds[cam_id], rng)
    after = kinematics.execute_primitive(obj, act)
    ok, mode = kinematics.classify_outcome(obj, after)
    d1 = render.render_depth(after, cams[cam_id])
    mode_joint, mode_sign = (mode if ok else (-1, 0))
    return cam_id, source, act.as_vector(), mode_joint, mode_sign, d1


def _episode_chunk(args):
    (obj_text, seed, slot_idx, round_idx, eps_and_sources, gmm_arr, width, height) = args
    obj = kinematics.loads_object(obj_text)
    cams = render.default_views(obj, width=width, height=height)
    clouds = []
    for cam in cams:
        depth = render.render_depth(obj, cam)
        pts, _ = render.depth_to_pointcloud(depth, cam)
        clouds.append(pts)
    gmm = gmm_from_array(gmm_arr) if gmm_arr is not None else None
    out = []
    for ep_idx, source in eps_and_sources:
        out.append((ep_idx,) + _episode(obj, cams, clouds, seed, slot_idx,
                                        round_idx, ep_idx, source, gmm))
    return slot_idx, out


# ---------------------------------------------------------------------------
# the adaptive collection loop

class _SlotState:
    def __init__(self, slot_idx, slot: Slot, cfg: CollectConfig):
        self.idx = slot_idx
        self.obj = slot.build()
        self.text = kinematics.dumps_object(self.obj)
        self.cams = render.default_views(self.obj, width=cfg.width, height=cfg.height)
        self.d0 = np.stack([render.render_depth(self.obj, c) for c in self.cams])
        self.clouds = [render.depth_to_pointcloud(d, c)[0]
                       for d, c in zip(self.d0, self.cams)]
        vol = render.fuse_views(self.obj, self.cams)
        self.vol = vol.channels()
        self.vol_origin = vol.origin
        self.e0 = None       # (V, E) once the encoder exists
        self.gmm = None
        self.success_actions = []


def _run_round(states, cfg, seed, round_idx, jobs):
    """Execute one round for every slot; returns raw episode tuples per slot."""
    chunks = []
    for st in states:
        n_rand = cfg.m if round_idx == 0 else int(round(cfg.eps * cfg.m))
        sources = [SOURCE_RANDOM if e < n_rand else SOURCE_GMM for e in range(cfg.m)]
        gmm_arr = gmm_to_array(st.gmm) if st.gmm is not None else None
        eps = list(enumerate(sources))
        if jobs > 1:
            per = max(1, (cfg.m + jobs - 1) // jobs)
            for lo in range(0, cfg.m, per):
                chunks.append((st.text, seed, st.idx, round_idx,
                               eps[lo:lo + per], gmm_arr, cfg.width, cfg.height))
        else:
            chunks.append((st.text, seed, st.idx, round_idx, eps, gmm_arr,
                           cfg.width, cfg.height))
    results = {st.idx: [] for st in states}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for slot_idx, rows in pool.map(_episode_chunk, chunks):
                results[slot_idx].extend(rows)
    else:
        for ch in chunks:
            st = states[ch[2]]
            gmm = st.gmm
            for ep_idx, source in ch[4]:
                results[st.idx].append(
                    (ep_idx,) + _episode(st.obj, st.cams, st.clouds, seed,
                                         st.idx, round_idx, ep_idx, source, gmm))
    for rows in results.values():
        rows.sort(key=lambda r: r[0])
    return results


def adaptive_collect(slots, cfg: CollectConfig, seed: int, jobs: int = 1) -> Dataset:
    """Run the full multi-round loop over a roster of (instance, state) slots.

    Round 0 is purely random and also provides the autoencoder training
    corpus and the frozen effect threshold; every later round mixes
    eps*m random episodes with (1-eps)*m mixture draws and refits each
    slot's mixture on its cumulative successful actions.
    """
    cfg.validate()
    states = [_SlotState(i, s, cfg) for i, s in enumerate(slots)]
    ae = perception.DepthAutoencoder(np.random.default_rng([seed, _S_AE, 0]),
                                     e_dim=cfg.e_dim, side=cfg.width)
    lam = cfg.lam
    rows = []
    d1_all = []
    ae_curve = []
    for round_idx in range(cfg.rounds):
        results = _run_round(states, cfg, seed, round_idx, jobs)
        round_d1 = {st.idx: np.stack([r[6] for r in results[st.idx]]) for st in states}
        if round_idx == 0:
            corpus = [st.d0 for st in states]
            probe_rng = np.random.default_rng([seed, _S_PROBE])
            pool = np.concatenate([round_d1[st.idx] for st in states])
            take = min(cfg.ae_corpus_cap, pool.shape[0])
            corpus.append(pool[probe_rng.choice(pool.shape[0], size=take, replace=False)])
            ae_curve = perception.train_depth_ae(
                ae, np.concatenate(corpus), np.random.default_rng([seed, _S_AE, 1]),
                steps=cfg.ae_steps, batch=cfg.ae_batch, lr=cfg.ae_lr)
            for st in states:
                st.e0 = ae.encode(st.d0)
        # embed the round's outcomes and label them
        norms_round = []
        for st in states:
            e1 = ae.encode(round_d1[st.idx])
            e0 = st.e0
            for (ep_idx, cam_id, source, avec, mj, ms, _d1), e1_row in zip(results[st.idx], e1):
                tau = e1_row - e0[cam_id]
                norms_round.append((st.idx, ep_idx, cam_id, source, avec, mj, ms,
                                    e0[cam_id], e1_row, float(np.linalg.norm(tau))))
        if round_idx == 0 and lam is None:
            lam = select_threshold([n[-1] for n in norms_round], cfg.lam_pct)
        for st in states:
            d1_all.append(round_d1[st.idx])
        for slot_idx, ep_idx, cam_id, source, avec, mj, ms, e0v, e1v, nrm in norms_round:
            _tau, yhat = label_effect(e0v, e1v, lam)
            row = np.empty(record_width(cfg.e_dim), dtype=np.float32)
            row[REC_SLOT] = slot_idx
            row[REC_CAM] = cam_id
            row[REC_ROUND] = round_idx
            row[REC_SOURCE] = source
            row[REC_A:REC_A + 10] = avec
            row[REC_YHAT] = yhat
            row[REC_MODE_JOINT] = mj
            row[REC_MODE_SIGN] = ms
            row[REC_E0:REC_E0 + cfg.e_dim] = e0v
            row[REC_E0 + cfg.e_dim:] = e1v
            rows.append(row)
            if yhat:
                states[slot_idx].success_actions.append(avec)
        # refit each slot's mixture on its cumulative successes
        if round_idx < cfg.rounds - 1:
            for st in states:
                if len(st.success_actions) >= 2:
                    st.gmm = fit_gmm(np.stack(st.success_actions), cfg.k,
                                     np.random.default_rng([seed, _S_GMM, st.idx, round_idx]))
    records = np.stack(rows)
    round_sources = []
    for r in range(cfg.rounds):
        in_round = records[records[:, REC_ROUND] == r]
        round_sources.append({
            "round": r,
            "random": int(np.sum(in_round[:, REC_SOURCE] == SOURCE_RANDOM)),
            "mixture": int(np.sum(in_round[:, REC_SOURCE] == SOURCE_GMM)),
        })
    manifest = {
        "kind": "interaction-dataset",
        "version": 1,
        "seed": int(seed),
        "rounds": cfg.rounds,
        "m": cfg.m,
        "eps": cfg.eps,
        "k": cfg.k,
        "lam": float(lam),
        "lam_pct": cfg.lam_pct,
        "round_sources": round_sources,
        "e_dim": cfg.e_dim,
        "width": cfg.width,
        "height": cfg.height,
        "slots": [{"category": s.category, "variant": s.variant,
                   "fractions": list(s.fractions)} for s in slots],
        "ae_steps": cfg.ae_steps,
        "ae_loss_first": ae_curve[0][1] if ae_curve else 0.0,
        "ae_loss_last": ae_curve[-1][1] if ae_curve else 0.0,
        "n_records": len(rows),
    }
    return Dataset(
        manifest=manifest,
        slot_texts=[st.text for st in states],
        d0=np.stack([st.d0 for st in states]),
        volumes=np.stack([st.vol for st in states]),
        vol_origins=np.stack([st.vol_origin for st in states]),
        records=records,
        d1=np.concatenate(d1_all),
        ae_state=nets.state_dict(ae.params()),
    )


# ---------------------------------------------------------------------------
# dataset container round-trip

def write_dataset(path, ds: Dataset) -> None:
    sections = {"manifest": container.json_to_array(ds.manifest)}
    for i, text in enumerate(ds.slot_texts):
        sections[f"slot{i:04d}.obj"] = container.text_to_array(text)
    sections["d0"] = ds.d0
    sections["volumes"] = ds.volumes
    sections["vol_origins"] = ds.vol_origins
    sections["records"] = ds.records
    sections["d1"] = ds.d1
    for name, arr in sorted(ds.ae_state.items()):
        sections[f"ae.{name}"] = arr
    container.write_container(path, sections)


def read_dataset(path) -> Dataset:
    sections = container.read_container(path)
    manifest = container.array_to_json(sections["manifest"])
    n_slots = len(manifest["slots"])
    slot_texts = [container.array_to_text(sections[f"slot{i:04d}.obj"])
                  for i in range(n_slots)]
    ae_state = {name[3:]: arr for name, arr in sections.items() if name.startswith("ae.")}
    return Dataset(
        manifest=manifest,
        slot_texts=slot_texts,
        d0=sections["d0"],
        volumes=sections["volumes"],
        vol_origins=sections["vol_origins"],
        records=sections["records"],
        d1=sections["d1"],
        ae_state=ae_state,
    )
