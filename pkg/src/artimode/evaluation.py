"""Trial runner and discovery metrics.

A trial is one proposed interaction on a freshly observed object: render,
query a policy for an action, execute, classify the joint change. The
metrics weight the raw success rate by how many of the object's available
interaction modes the successes cover (modes ratio) and by how evenly they
cover them (normalized entropy). Goal-conditioned runs additionally check
whether the classified mode matches the mode the goal image encoded.

Policies are {random, learned, learned-goal}. The random policy is the same
surface-point proposal the data collection starts from, so trained-vs-random
comparisons share one baseline definition.
"""

import csv
import dataclasses
import math
from collections import Counter

import numpy as np

from . import datagen
from . import goalcond
from . import kinematics
from . import model as modelmod
from . import render

TIERS = ("unseen-states", "unseen-instances", "unseen-categories")

GOAL_FRACTION = 0.5     # goal images show the joint half way along its remaining travel

_S_EVAL = 31


class EvalError(ValueError):
    pass


@dataclasses.dataclass
class Trial:
    category: str
    variant: int
    state: tuple
    tier: str
    policy: str
    action: np.ndarray
    success: bool
    mode: tuple            # (link_idx, sign), or None on failure
    gt_modes: int
    goal_reached: bool = None

    def mode_key(self):
        if self.mode is None:
            return None
        return (self.category, self.variant, self.state,
                int(self.mode[0]), int(self.mode[1]))


@dataclasses.dataclass
class TrialLog:
    entries: list

    def __len__(self):
        return len(self.entries)

    def extend(self, other):
        self.entries.extend(other.entries)

    def subset(self, **field_values):
        keep = [t for t in self.entries
                if all(getattr(t, k) == v for k, v in field_values.items())]
        return TrialLog(keep)


@dataclasses.dataclass
class MetricReport:
    ssr: float
    modes_ratio: float
    norm_entropy: float
    mode_counts: dict
    gt_modes: int
    ssr_goal: float = None


# ---------------------------------------------------------------------------
# policies

class RandomPolicy:
    """Surface points with jitter, uniform orientation and pull direction."""

    name = "random"

    def act(self, ctx, rng):
        cam_id = int(rng.integers(len(ctx.cams)))
        return datagen.random_policy(ctx.obj, ctx.clouds[cam_id], rng), None


class LearnedPolicy:
    """Latent from the prior, point and pose from the trained heads."""

    name = "learned"

    def __init__(self, m, samples=modelmod.INFER_SAMPLES, temp=modelmod.INFER_TEMP):
        self.m = m
        self.samples = samples
        self.temp = temp

    def act(self, ctx, rng):
        cam_id = int(rng.integers(len(ctx.cams)))
        act, _ = modelmod.infer_action(
            self.m, ctx.depths[cam_id], ctx.cams[cam_id], ctx.channels,
            ctx.origin, rng, samples=self.samples, temp=self.temp)
        return act, None


class GoalPolicy:
    """Latent from the goal selector fed a rendered target-state image.

    Each trial draws one of the object's available modes, renders the state
    with that joint moved part way along the drawn direction, and asks the
    selector for the latent that should reach it.
    """

    name = "learned-goal"

    def __init__(self, m, sel, ae, samples=modelmod.INFER_SAMPLES,
                 temp=modelmod.INFER_TEMP):
        self.m = m
        self.sel = sel
        self.ae = ae
        self.samples = samples
        self.temp = temp

    def act(self, ctx, rng):
        cam_id = int(rng.integers(len(ctx.cams)))
        modes = kinematics.enumerate_gt_modes(ctx.obj)
        if not modes:
            return datagen.random_policy(ctx.obj, ctx.clouds[cam_id], rng), None
        link, sign = modes[int(rng.integers(len(modes)))]
        goal_depth = render_goal(ctx.obj, link, sign, ctx.cams[cam_id])
        act, _ = goalcond.infer_goal_action(
            self.m, self.sel, self.ae, ctx.depths[cam_id], ctx.cams[cam_id],
            ctx.channels, ctx.origin, goal_depth, rng,
            samples=self.samples, temp=self.temp)
        return act, (link, sign)


def render_goal(obj, link, sign, cam, fraction=GOAL_FRACTION):
    """Depth image of the object with one joint moved toward a limit."""
    j = obj.joints[link]
    target = j.value + sign * fraction * (j.hi - j.lo)
    target = min(max(target, j.lo), j.hi)
    return render.render_depth(kinematics.with_joint_value(obj, link, target), cam)


# ---------------------------------------------------------------------------
# trial runner

class _ObsContext:
    """Per-(object, state) observation shared by every trial on it."""

    def __init__(self, obj, width, height):
        self.obj = obj
        self.cams = render.default_views(obj, width=width, height=height)
        self.depths = [render.render_depth(obj, c) for c in self.cams]
        self.clouds = [render.depth_to_pointcloud(d, c)[0]
                       for d, c in zip(self.depths, self.cams)]
        vol = render.fuse_views(obj, self.cams)
        self.channels = vol.channels()
        self.origin = vol.origin


def run_trials(policy, slots, n_per, seed, tier="unseen-states",
               width=96, height=96):
    """n_per trials of one policy on each roster slot; deterministic in seed."""
    if n_per < 1:
        raise EvalError("run_trials: need at least one trial per object")
    entries = []
    for slot_idx, slot in enumerate(slots):
        obj = slot.build()
        ctx = _ObsContext(obj, width, height)
        gt = len(kinematics.enumerate_gt_modes(obj))
        for t in range(n_per):
            rng = np.random.default_rng([seed, _S_EVAL, slot_idx, t])
            act, intended = policy.act(ctx, rng)
            after = kinematics.execute_primitive(obj, act)
            ok, mode = kinematics.classify_outcome(obj, after)
            reached = None
            if intended is not None:
                reached = bool(ok and mode == intended)
            entries.append(Trial(
                category=slot.category, variant=slot.variant,
                state=tuple(slot.fractions), tier=tier, policy=policy.name,
                action=act.as_vector(), success=bool(ok), mode=mode,
                gt_modes=gt, goal_reached=reached))
    return TrialLog(entries)


# ---------------------------------------------------------------------------
# metrics

def metric_ssr(log: TrialLog) -> float:
    """Fraction of trials that moved some joint past the success threshold."""
    if len(log) == 0:
        raise EvalError("metric_ssr: empty log")
    return sum(t.success for t in log.entries) / len(log)


def _gt_mode_total(log):
    seen = {}
    for t in log.entries:
        seen[(t.category, t.variant, t.state)] = t.gt_modes
    return sum(seen.values())


def metric_modes_ratio(log: TrialLog, gt_modes=None) -> float:
    """Success rate weighted by the fraction of available modes discovered."""
    if len(log) == 0:
        return 0.0
    if gt_modes is None:
        gt_modes = _gt_mode_total(log)
    if gt_modes < 1:
        raise EvalError("metric_modes_ratio: need at least one ground-truth mode")
    found = {t.mode_key() for t in log.entries if t.success}
    return metric_ssr(log) * min(len(found) / gt_modes, 1.0)


def metric_norm_entropy(log: TrialLog, gt_modes=None,
                        over_successes=True) -> float:
    """Success rate weighted by the entropy of the discovered-mode spread.

    p(m) is the per-mode share of successful trials; with over_successes
    False it is the share of all trials instead (failures then count toward
    the distribution's total but not its support).
    """
    if len(log) == 0:
        return 0.0
    if gt_modes is None:
        gt_modes = _gt_mode_total(log)
    if gt_modes < 1:
        raise EvalError("metric_norm_entropy: need at least one ground-truth mode")
    counts = Counter(t.mode_key() for t in log.entries if t.success)
    n_succ = sum(counts.values())
    if n_succ == 0:
        return 0.0
    ssr = metric_ssr(log)
    if gt_modes == 1:
        return ssr
    denom = n_succ if over_successes else len(log)
    h = -sum((c / denom) * math.log(c / denom) for c in counts.values())
    return ssr * (h + 0.0) / math.log(gt_modes)


def metric_ssr_goal(log: TrialLog) -> float:
    """Fraction of trials whose classified mode matched the goal's mode."""
    if len(log) == 0:
        raise EvalError("metric_ssr_goal: empty log")
    if any(t.goal_reached is None for t in log.entries):
        raise EvalError("metric_ssr_goal: log has trials without goal flags")
    return sum(t.goal_reached for t in log.entries) / len(log)


def report(log: TrialLog, gt_modes=None) -> MetricReport:
    """All metrics of one log; ssr_goal only when every trial carries a flag."""
    if len(log) == 0:
        raise EvalError("report: empty log")
    counts = Counter(t.mode_key() for t in log.entries if t.success)
    goal = None
    if all(t.goal_reached is not None for t in log.entries):
        goal = metric_ssr_goal(log)
    total_gt = gt_modes if gt_modes is not None else _gt_mode_total(log)
    return MetricReport(
        ssr=metric_ssr(log),
        modes_ratio=metric_modes_ratio(log, gt_modes),
        norm_entropy=metric_norm_entropy(log, gt_modes),
        mode_counts=dict(counts),
        gt_modes=total_gt,
        ssr_goal=goal)


def write_report_csv(path, log: TrialLog):
    """One row per (tier, category, policy) present in the log."""
    rows = []
    combos = sorted({(t.tier, t.category, t.policy) for t in log.entries})
    for tier, category, policy in combos:
        sub = log.subset(tier=tier, category=category, policy=policy)
        rep = report(sub)
        rows.append({
            "tier": tier, "category": category, "policy": policy,
            "trials": len(sub),
            "ssr": "%.6f" % rep.ssr,
            "modes_ratio": "%.6f" % rep.modes_ratio,
            "norm_entropy": "%.6f" % rep.norm_entropy,
            "ssr_goal": "" if rep.ssr_goal is None else "%.6f" % rep.ssr_goal,
        })
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["tier", "category", "policy",
                                           "trials", "ssr", "modes_ratio",
                                           "norm_entropy", "ssr_goal"])
        w.writeheader()
        w.writerows(rows)
    return rows
