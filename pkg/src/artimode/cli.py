"""Command line entry points.

Four subcommands share one run directory: gen-data fills it with a dataset,
train turns the dataset into a checkpoint, eval scores policies against the
roster, infer proposes and executes a single action. Each writes the
resolved config next to its outputs so any artifact can be regenerated from
the directory alone.

Exit codes: 0 success, 2 configuration error, 3 data or file error,
4 numeric failure.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import autodiff as ad
from . import container
from . import datagen
from . import evaluation
from . import goalcond
from . import kinematics
from . import model as modelmod
from . import nets
from . import perception
from . import render
from .config import ConfigError, RunConfig

DATASET_FILE = "dataset.aaim"
CHECKPOINT_FILE = "checkpoint.aaim"

_DATA_ERRORS = (kinematics.DataError, container.ContainerError,
                render.RenderError, modelmod.ModelError, goalcond.GoalError,
                evaluation.EvalError, OSError)


# ---------------------------------------------------------------------------
# checkpoint files

def write_checkpoint(path, meta, param_sections):
    sections = {"manifest": container.json_to_array(meta)}
    sections.update(param_sections)
    container.write_container(path, sections)


def read_checkpoint(path):
    sections = container.read_container(path)
    meta = container.array_to_json(sections.pop("manifest"))
    return meta, sections


def _load_into(params, sections, what):
    try:
        nets.load_state(params, sections)
    except KeyError as e:
        raise kinematics.DataError(
            "checkpoint is missing the %s section (no %s)" % (what, e.args[0])) from None


def build_from_checkpoint(path, cfg: RunConfig, want_goal=False):
    """Reconstruct (ae, model, selector-or-None) from a checkpoint file."""
    meta, sections = read_checkpoint(path)
    rng = np.random.default_rng(0)
    ae = perception.DepthAutoencoder(rng, e_dim=int(meta["e_dim"]),
                                     side=int(meta["width"]))
    _load_into(ae.params(), sections, "depth autoencoder")
    m = modelmod.InteractionModel(
        rng, e_dim=int(meta["e_dim"]), z_dim=int(meta["z_dim"]),
        plane_c=int(meta["plane_c"]), plane_g=int(meta["plane_g"]),
        width=int(meta["head_width"]))
    for what, pick in (("tri-plane", m.tri.params()),
                       ("latent-mode", m.cvae_params()),
                       ("scoring-head", m.head_params())):
        _load_into(pick, sections, what)
    sel = None
    if any(k.startswith("goal_selector.") for k in sections):
        sel = goalcond.GoalSelector(rng, int(meta["e_dim"]), int(meta["z_dim"]),
                                    width=int(meta["head_width"]))
        _load_into(sel.params(), sections, "goal selector")
    elif want_goal:
        raise kinematics.DataError(
            "goal requested but the checkpoint has no goal_selector section; "
            "train with a goal budget first")
    return meta, ae, m, sel


# ---------------------------------------------------------------------------
# gen-data

def mode_balance_rows(ds):
    """Per (round, slot) success counts by mode, plus failures."""
    rows = []
    recs = ds.records
    slots = ds.manifest["slots"]
    for r in range(int(ds.manifest["rounds"])):
        for s, slot in enumerate(slots):
            sel = recs[(recs[:, datagen.REC_ROUND] == r)
                       & (recs[:, datagen.REC_SLOT] == s)]
            modes = {}
            fails = 0
            for row in sel:
                if row[datagen.REC_YHAT] > 0.5 and row[datagen.REC_MODE_JOINT] >= 0:
                    key = (int(row[datagen.REC_MODE_JOINT]),
                           int(row[datagen.REC_MODE_SIGN]))
                    modes[key] = modes.get(key, 0) + 1
                else:
                    fails += 1
            for (link, sign), count in sorted(modes.items()):
                rows.append({"round": r, "slot": s,
                             "category": slot["category"],
                             "variant": slot["variant"],
                             "mode": "%d%s" % (link, "+" if sign > 0 else "-"),
                             "count": count})
            rows.append({"round": r, "slot": s, "category": slot["category"],
                         "variant": slot["variant"], "mode": "none",
                         "count": fails})
    return rows


def print_mode_balance(ds, rows, out):
    srcs = ds.manifest["round_sources"]
    print("per-round mode balance (lam=%.6g):" % ds.manifest["lam"])
    for r in range(int(ds.manifest["rounds"])):
        src = srcs[r]
        print("  round %d: %d random + %d mixture proposals"
              % (r, src["random"], src["mixture"]))
        for row in rows:
            if row["round"] == r:
                print("    slot %d %s-%d  %s: %d"
                      % (row["slot"], row["category"], row["variant"],
                         row["mode"], row["count"]))
    path = os.path.join(out, "mode_balance.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["round", "slot", "category",
                                           "variant", "mode", "count"])
        w.writeheader()
        w.writerows(rows)
    print("wrote %s" % path)


def cmd_gen_data(cfg: RunConfig, out, jobs):
    os.makedirs(out, exist_ok=True)
    cfg.save(os.path.join(out, "config.json"))
    ds = datagen.adaptive_collect(cfg.slots(), cfg.collect_config(), cfg.seed,
                                  jobs=jobs)
    path = os.path.join(out, DATASET_FILE)
    datagen.write_dataset(path, ds)
    print("wrote %s (%d records, %d successes)"
          % (path, ds.records.shape[0], int(ds.labels().sum())))
    print_mode_balance(ds, mode_balance_rows(ds), out)
    return 0


# ---------------------------------------------------------------------------
# train

def _check_dims(cfg: RunConfig, ds):
    pairs = (("e_dim", cfg.model.e_dim), ("width", cfg.camera.width),
             ("height", cfg.camera.height))
    for key, want in pairs:
        have = int(ds.manifest[key])
        if have != want:
            raise ConfigError("dataset %s=%d does not match config %s=%d; "
                              "re-run gen-data or fix the config"
                              % (key, have, key, want))


def write_curve_csv(path, curves):
    if not curves:
        return
    names = list(curves[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for c in curves:
            w.writerow({k: ("%d" % v if k == "step" else "%.6f" % v)
                        for k, v in c.items()})


def cmd_train(cfg: RunConfig, out, jobs):
    ds = datagen.read_dataset(os.path.join(out, DATASET_FILE))
    _check_dims(cfg, ds)
    cfg.save(os.path.join(out, "config.json"))
    rng = np.random.default_rng([cfg.seed, modelmod._S_TRAIN, 0])
    m = modelmod.InteractionModel(
        rng, e_dim=cfg.model.e_dim, z_dim=cfg.model.z_dim,
        plane_c=cfg.model.plane_c, plane_g=cfg.model.plane_g,
        width=cfg.model.head_width)
    tc = modelmod.TrainConfig(steps=cfg.train.steps, batch=cfg.train.batch,
                              lr=cfg.train.lr, beta=cfg.train.beta)
    curves = modelmod.train(m, ds, tc, seed=cfg.seed)
    write_curve_csv(os.path.join(out, "train_curve.csv"), curves)
    print("trained %d steps, final loss %.4f" % (cfg.train.steps,
                                                 curves[-1]["total"]))
    params = dict(ds.ae_state)
    params.update(m.state_sections())
    meta = {
        "kind": "interaction-checkpoint", "version": 1, "seed": cfg.seed,
        "e_dim": cfg.model.e_dim, "z_dim": cfg.model.z_dim,
        "plane_c": cfg.model.plane_c, "plane_g": cfg.model.plane_g,
        "head_width": cfg.model.head_width,
        "width": cfg.camera.width, "height": cfg.camera.height,
        "train_steps": cfg.train.steps, "goal_steps": 0,
    }
    if cfg.train.goal_steps > 0 and ds.labels().any():
        gc = goalcond.FinetuneConfig(steps=cfg.train.goal_steps,
                                     batch=cfg.train.batch, lr=cfg.train.lr)
        sel, gcurves = goalcond.finetune_goal(m, ds, gc, seed=cfg.seed)
        write_curve_csv(os.path.join(out, "goal_curve.csv"), gcurves)
        params.update(sel.state_sections())
        meta["goal_steps"] = cfg.train.goal_steps
        print("goal selector: %d steps, final loss %.4f"
              % (cfg.train.goal_steps, gcurves[-1]["total"]))
    elif cfg.train.goal_steps > 0:
        print("goal selector skipped: dataset has no successful records")
    path = os.path.join(out, CHECKPOINT_FILE)
    write_checkpoint(path, meta, params)
    print("wrote %s (%d sections)" % (path, len(params) + 1))
    return 0


# ---------------------------------------------------------------------------
# eval

def _score_heatmap(m, ctx, rng, samples, temp):
    """Point scores of one prior draw splatted back onto the first view."""
    depth = ctx.depths[0]
    pts, pix = render.depth_to_pointcloud(depth, ctx.cams[0])
    img = np.full(depth.shape, np.nan)
    if pts.shape[0] == 0:
        return img
    if pts.shape[0] > samples:
        keep = rng.choice(pts.shape[0], size=samples, replace=False)
        pts, pix = pts[keep], pix[keep]
    z = np.tile(rng.standard_normal(m.z_dim).astype(np.float32),
                (pts.shape[0], 1))
    planes = m.tri.encode(ctx.channels)
    side = render.GRID_N * render.VOXEL
    v_p = perception.query_local_feature(planes, ctx.origin, side, pts)
    scores = modelmod.point_score(m, v_p, z)
    img[pix[:, 0], pix[:, 1]] = scores
    return img


def cmd_eval(cfg: RunConfig, out, jobs):
    os.makedirs(out, exist_ok=True)
    cfg.save(os.path.join(out, "config.json"))
    ckpt = os.path.join(out, CHECKPOINT_FILE)
    policies = [evaluation.RandomPolicy()]
    m = None
    if os.path.exists(ckpt):
        _, ae, m, sel = build_from_checkpoint(ckpt, cfg)
        policies.append(evaluation.LearnedPolicy(m, samples=cfg.eval.samples,
                                                 temp=cfg.eval.temp))
        if sel is not None:
            policies.append(evaluation.GoalPolicy(m, sel, ae,
                                                  samples=cfg.eval.samples,
                                                  temp=cfg.eval.temp))
    else:
        print("no checkpoint at %s; evaluating the random policy only" % ckpt)
    tiers = {}
    for tier, slot in cfg.eval_slots():
        tiers.setdefault(tier, []).append(slot)
    log = evaluation.TrialLog([])
    for pol in policies:
        for tier, slots in sorted(tiers.items()):
            part = evaluation.run_trials(pol, slots, cfg.eval.trials, cfg.seed,
                                         tier=tier, width=cfg.camera.width,
                                         height=cfg.camera.height)
            log.extend(part)
            rep = evaluation.report(part)
            print("%s %s: ssr %.3f modes %.3f entropy %.3f over %d trials"
                  % (pol.name, tier, rep.ssr, rep.modes_ratio,
                     rep.norm_entropy, len(part)))
    rows = evaluation.write_report_csv(os.path.join(out, "report.csv"), log)
    print("wrote %s (%d rows)" % (os.path.join(out, "report.csv"), len(rows)))
    if m is not None:
        hm_rng = np.random.default_rng([cfg.seed, 41])
        for tier, slot in cfg.eval_slots():
            ctx = evaluation._ObsContext(slot.build(), cfg.camera.width,
                                         cfg.camera.height)
            img = _score_heatmap(m, ctx, hm_rng, cfg.eval.samples, cfg.eval.temp)
            name = "heatmap_%s_%s-%d.ppm" % (tier, slot.category, slot.variant)
            render.write_ppm(os.path.join(out, name),
                             render.heatmap_rgb(img, ctx.depths[0]))
        print("wrote %d heatmaps" % len(cfg.eval_slots()))
    return 0


# ---------------------------------------------------------------------------
# infer

def _fmt_vec(v):
    return "(" + ", ".join("%.4f" % x for x in v) + ")"


def cmd_infer(cfg: RunConfig, out, goal_path):
    ckpt = os.path.join(out, CHECKPOINT_FILE)
    if not os.path.exists(ckpt):
        raise kinematics.DataError("no checkpoint at %s; run train first" % ckpt)
    meta, ae, m, sel = build_from_checkpoint(ckpt, cfg,
                                             want_goal=goal_path is not None)
    pairs = cfg.eval_slots()
    slot = pairs[0][1] if pairs else cfg.slots()[0]
    obj = slot.build()
    ctx = evaluation._ObsContext(obj, cfg.camera.width, cfg.camera.height)
    rng = np.random.default_rng([cfg.seed, 42])
    if goal_path is not None:
        goal_depth = render.read_pgm(goal_path)
        act, diag = goalcond.infer_goal_action(
            m, sel, ae, ctx.depths[0], ctx.cams[0], ctx.channels, ctx.origin,
            goal_depth, rng, samples=cfg.eval.samples, temp=cfg.eval.temp)
    else:
        act, diag = modelmod.infer_action(
            m, ctx.depths[0], ctx.cams[0], ctx.channels, ctx.origin, rng,
            samples=cfg.eval.samples, temp=cfg.eval.temp)
    quat = kinematics.mat_to_quat(act.rot)
    print("object %s-%d state %r" % (slot.category, slot.variant,
                                     tuple(slot.fractions)))
    print("p = %s" % _fmt_vec(act.p))
    print("R = %s (unit quaternion, w first)" % _fmt_vec(quat))
    print("F = %s" % _fmt_vec(act.f))
    after = kinematics.execute_primitive(obj, act)
    ok, mode = kinematics.classify_outcome(obj, after)
    if ok:
        print("outcome: success, mode (link %d, %s)"
              % (mode[0], "+" if mode[1] > 0 else "-"))
    else:
        print("outcome: no joint moved past threshold")
    return 0


# ---------------------------------------------------------------------------
# argument handling

def _parser():
    ap = argparse.ArgumentParser(
        prog="artimode",
        description="discover interaction modes of articulated objects from depth")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name, help_ in (("gen-data", "collect an interaction dataset"),
                        ("train", "train the model on a collected dataset"),
                        ("eval", "score policies and write the metric report"),
                        ("infer", "propose and execute one action")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default="run", help="run directory (default: run)")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for data generation")
        if name == "infer":
            p.add_argument("--goal", help="goal depth image (PGM) for "
                                          "goal-conditioned inference")
    return ap


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = int(args.seed)
    return cfg.validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.cmd == "gen-data":
            return cmd_gen_data(cfg, args.out, args.jobs)
        if args.cmd == "train":
            return cmd_train(cfg, args.out, args.jobs)
        if args.cmd == "eval":
            return cmd_eval(cfg, args.out, args.jobs)
        return cmd_infer(cfg, args.out, getattr(args, "goal", None))
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return 2
    except _DATA_ERRORS as e:
        print("data error: %s" % e, file=sys.stderr)
        return 3
    except (ad.NumericError, FloatingPointError) as e:
        print("numeric failure: %s" % e, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
