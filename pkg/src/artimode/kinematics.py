"""Articulated rigid objects built from signed-distance primitives.

An object is a small kinematic tree: each link carries box/cylinder
primitives posed in its rest frame, at most one graspable region, and an
optional joint connecting it to its parent. Joint values pose the tree;
a quasi-static contact model turns parameterized pushes and pulls into
joint value changes.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _kernels

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

CATEGORIES = (
    "cabinet-prismatic",
    "cabinet-revolute",
    "faucet",
    "switch",
    "fridge",
    "window",
)

# stable per-category seed stream ids
_CATEGORY_IDS = {name: 101 + i for i, name in enumerate(CATEGORIES)}

CONTACT_RADIUS = 0.015
GRASP_CONE_DEG = 60.0
MOVE_MAGNITUDE = 0.12
SUCCESS_FRACTION = 0.10


def _vec(x, n=3):
    a = np.asarray(x, dtype=np.float64).reshape(n).copy()
    a.flags.writeable = False
    return a


class DataError(ValueError):
    """Malformed object description or action."""


@dataclass(frozen=True)
class JointSpec:
    kind: str
    axis: np.ndarray
    anchor: np.ndarray
    lo: float
    hi: float
    value: float

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise DataError("unknown joint kind %r" % (self.kind,))
        object.__setattr__(self, "axis", _vec(self.axis))
        object.__setattr__(self, "anchor", _vec(self.anchor))
        n = float(np.linalg.norm(self.axis))
        if not 0.999 < n < 1.001:
            raise DataError("joint axis must be unit length")
        if not self.lo <= self.value <= self.hi:
            raise DataError("joint value %g outside [%g, %g]" % (self.value, self.lo, self.hi))


@dataclass(frozen=True)
class SdfPrimitive:
    kind: str  # "box" half extents in params | "cylinder" (radius, half_height)
    params: np.ndarray
    pos: np.ndarray
    quat: np.ndarray  # (w, x, y, z), pose in the link rest frame

    def __post_init__(self):
        object.__setattr__(self, "params", _vec(self.params))
        object.__setattr__(self, "pos", _vec(self.pos))
        object.__setattr__(self, "quat", _vec(self.quat, 4))
        if self.kind not in ("box", "cylinder"):
            raise DataError("unknown primitive kind %r" % (self.kind,))
        if np.any(self.params[:2] <= 0):
            raise DataError("primitive dimensions must be positive")


@dataclass(frozen=True)
class HandleRegion:
    center: np.ndarray  # link rest frame
    radius: float
    normal: np.ndarray  # outward, link rest frame
    cone_deg: float = GRASP_CONE_DEG  # tool alignment tolerance for a firm grasp

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "normal", _vec(self.normal))


@dataclass(frozen=True)
class LinkGeometry:
    name: str
    parent: int  # index into links, -1 for the root
    primitives: tuple
    handle: Optional[HandleRegion] = None


@dataclass(frozen=True)
class ArticulatedObject:
    category: str
    variant_seed: int
    base_pos: np.ndarray
    links: tuple  # links[0] is the root; parents precede children
    joints: tuple  # Optional[JointSpec] per link, None for the root

    def __post_init__(self):
        object.__setattr__(self, "base_pos", _vec(self.base_pos))
        if len(self.links) != len(self.joints):
            raise DataError("links and joints must pair up")
        if self.joints[0] is not None:
            raise DataError("root link cannot have a joint")
        for i, link in enumerate(self.links):
            if not -1 <= link.parent < i:
                raise DataError("link %d parent %d out of order" % (i, link.parent))

    @property
    def movable_links(self):
        return tuple(i for i, j in enumerate(self.joints) if j is not None)

    def joint_values(self):
        return np.array([j.value for j in self.joints if j is not None], dtype=np.float64)


def quat_to_mat(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float64)


def axis_angle_mat(axis, angle):
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = axis
    cc = 1.0 - c
    return np.array([
        [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
    ], dtype=np.float64)


def with_joint_value(obj, link_idx, value):
    """Same object with one joint moved; value is clamped to the limits."""
    joint = obj.joints[link_idx]
    if joint is None:
        raise DataError("link %d has no joint" % (link_idx,))
    value = float(np.clip(value, joint.lo, joint.hi))
    joints = list(obj.joints)
    joints[link_idx] = replace(joint, value=value)
    return replace(obj, joints=tuple(joints))


def with_joint_values(obj, values):
    out = obj
    for link_idx, v in zip(obj.movable_links, values):
        out = with_joint_value(out, link_idx, v)
    return out


def forward_kinematics(obj):
    """World pose (R, t) of every link frame at the current joint values."""
    poses = []
    for i, link in enumerate(obj.links):
        if link.parent < 0:
            pr, pt = np.eye(3), obj.base_pos.copy()
        else:
            pr, pt = poses[link.parent]
        joint = obj.joints[i]
        if joint is None:
            jr, jt = np.eye(3), np.zeros(3)
        elif joint.kind == REVOLUTE:
            jr = axis_angle_mat(joint.axis, joint.value)
            jt = joint.anchor - jr @ joint.anchor
        else:
            jr = np.eye(3)
            jt = joint.axis * joint.value
        poses.append((pr @ jr, pr @ jt + pt))
    return poses


def primitive_soup(obj):
    """Flat world-frame arrays for the kernels: kinds, rots, trans, params, owner link."""
    poses = forward_kinematics(obj)
    kinds, rots, trans, params, owners = [], [], [], [], []
    for i, link in enumerate(obj.links):
        lr, lt = poses[i]
        for prim in link.primitives:
            kinds.append(_kernels.BOX if prim.kind == "box" else _kernels.CYLINDER)
            rots.append(lr @ quat_to_mat(prim.quat))
            trans.append(lr @ prim.pos + lt)
            params.append(prim.params)
            owners.append(i)
    return (
        np.asarray(kinds, dtype=np.int32),
        np.ascontiguousarray(rots, dtype=np.float64).reshape(-1, 3, 3),
        np.ascontiguousarray(trans, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(params, dtype=np.float64).reshape(-1, 3),
        np.asarray(owners, dtype=np.int32),
    )


def scene_sdf(obj, pts):
    """Signed distance to the whole object and the owning link per query point."""
    kinds, rots, trans, params, owners = primitive_soup(obj)
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    d, prim = _kernels.scene_sdf_batch(kinds, rots, trans, params, pts)
    link = np.where(prim >= 0, owners[np.clip(prim, 0, None)], -1).astype(np.int32)
    return d, link


def sdf_normal(obj, p, eps=1e-4):
    """Outward surface normal by central differences of the scene SDF."""
    p = np.asarray(p, dtype=np.float64)
    probes = np.repeat(p[None, :], 6, axis=0)
    for a in range(3):
        probes[2 * a, a] += eps
        probes[2 * a + 1, a] -= eps
    d, _ = scene_sdf(obj, probes)
    g = np.array([d[0] - d[1], d[2] - d[3], d[4] - d[5]])
    n = np.linalg.norm(g)
    if n < 1e-12:
        return np.array([0.0, 0.0, 1.0])
    return g / n


def aabb(obj, margin=0.0):
    """Axis-aligned bounds of the posed object, from primitive bounds."""
    kinds, rots, trans, params, _ = primitive_soup(obj)
    los, his = [], []
    for k, r, t, p in zip(kinds, rots, trans, params):
        if k == _kernels.BOX:
            half = np.abs(r) @ p
        else:
            # bound of a posed z-aligned cylinder per world axis
            zc = r[:, 2]
            half = p[0] * np.sqrt(np.clip(1.0 - zc * zc, 0.0, 1.0)) + p[1] * np.abs(zc)
        los.append(t - half)
        his.append(t + half)
    return np.min(los, axis=0) - margin, np.max(his, axis=0) + margin


def centroid(obj):
    lo, hi = aabb(obj)
    return (lo + hi) / 2.0


# ---------------------------------------------------------------------------
# actions and the quasi-static contact model

@dataclass(frozen=True)
class ActionPrimitive:
    """A parameterized interaction: approach point p, wrist frame R, move direction F.

    R's third column is the tool pointing direction; F is the unit direction
    the contact is dragged or pushed along for a fixed magnitude.
    """

    p: np.ndarray
    rot: np.ndarray  # (3, 3)
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _vec(self.p))
        object.__setattr__(self, "f", _vec(self.f))
        r = np.asarray(self.rot, dtype=np.float64).reshape(3, 3).copy()
        r.flags.writeable = False
        object.__setattr__(self, "rot", r)
        if np.linalg.norm(self.f) < 1e-9:
            raise DataError("zero move direction")

    def as_vector(self):
        """10-dim encoding: p (3), R as quaternion (4, w >= 0), unit F (3)."""
        q = mat_to_quat(self.rot)
        f = self.f / np.linalg.norm(self.f)
        return np.concatenate([self.p, q, f]).astype(np.float32)

    @staticmethod
    def from_vector(v):
        v = np.asarray(v, dtype=np.float64).reshape(10)
        q = v[3:7]
        n = np.linalg.norm(q)
        if n < 1e-9:
            raise DataError("degenerate orientation quaternion")
        return ActionPrimitive(p=v[:3], rot=quat_to_mat(q / n), f=v[7:10])


def mat_to_quat(m):
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 1e-12)) * 2
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def _world_handle(obj, link_idx, poses):
    link = obj.links[link_idx]
    if link.handle is None:
        return None
    lr, lt = poses[link_idx]
    h = link.handle
    return lr @ h.center + lt, lr @ h.normal, h.radius, h.cone_deg


def _motion_direction(joint, poses, link_idx, obj, at_point):
    """World-frame velocity direction of a joint-frame point for unit +dvalue."""
    parent = obj.links[link_idx].parent
    if parent < 0:
        pr = np.eye(3)
    else:
        pr = poses[parent][0]
    axis_w = pr @ joint.axis
    if joint.kind == PRISMATIC:
        return axis_w, 1.0
    anchor_w = pr @ joint.anchor + (poses[parent][1] if parent >= 0 else obj.base_pos)
    arm = at_point - anchor_w
    vel = np.cross(axis_w, arm)
    lever = np.linalg.norm(vel)
    if lever < 1e-9:
        return np.zeros(3), 0.0
    return vel / lever, lever


def execute_primitive(obj, action, move_magnitude=MOVE_MAGNITUDE,
                      contact_radius=CONTACT_RADIUS, cone_deg=GRASP_CONE_DEG):
    """Quasi-static outcome of one interaction; returns the resulting object.

    Contact forms when the approach point is within contact_radius of the
    surface. A contact inside a movable link's graspable region whose tool
    axis lies within the region's grasp cone of the region normal is firm and
    drags the link along the full F; any other contact is a frictionless
    touch that transmits only the normal component of F, and only when F
    points into the surface. The contacted link's joint moves by the
    projection of the transmitted move onto its instantaneous motion
    direction, clamped to the limits. cone_deg is the fallback cone for
    regions that do not set their own.
    """
    d, link_hits = scene_sdf(obj, action.p[None, :])
    if d[0] > contact_radius:
        return obj
    link_idx = int(link_hits[0])
    joint = obj.joints[link_idx]
    if joint is None:
        return obj
    poses = forward_kinematics(obj)
    handle = _world_handle(obj, link_idx, poses)
    firm = False
    if handle is not None:
        h_center, h_normal, h_radius, h_cone = handle
        if h_cone is None:
            h_cone = cone_deg
        on_handle = np.linalg.norm(action.p - h_center) <= h_radius
        tool = action.rot[:, 2]
        cos_lim = np.cos(np.deg2rad(h_cone))
        aligned = float(np.dot(-tool, h_normal)) >= cos_lim
        firm = on_handle and aligned
    f_unit = action.f / np.linalg.norm(action.f)
    direction, lever = _motion_direction(joint, poses, link_idx, obj, action.p)
    if lever <= 0.0:
        return obj
    if firm:
        travel = float(np.dot(f_unit, direction)) * move_magnitude
    else:
        n_hat = sdf_normal(obj, action.p)
        fn = float(np.dot(f_unit, n_hat))
        if fn >= 0.0:
            return obj  # touch contact can only press, not pull
        travel = fn * float(np.dot(n_hat, direction)) * move_magnitude
    if joint.kind == REVOLUTE:
        dval = travel / lever
    else:
        dval = travel
    return with_joint_value(obj, link_idx, joint.value + dval)


# ---------------------------------------------------------------------------
# ground-truth interaction modes

def enumerate_gt_modes(obj):
    """All (link_idx, sign) pairs a joint could move in from its current value."""
    modes = []
    for i in obj.movable_links:
        j = obj.joints[i]
        span = j.hi - j.lo
        if j.hi - j.value > 1e-6 * max(span, 1.0):
            modes.append((i, +1))
        if j.value - j.lo > 1e-6 * max(span, 1.0):
            modes.append((i, -1))
    return modes


def classify_outcome(before, after, success_fraction=SUCCESS_FRACTION):
    """Ground-truth label: (success, mode) by largest relative joint change.

    Success means some joint moved by at least success_fraction of its range;
    the mode is (link_idx, sign) of the largest mover, ties to the lowest
    link index. Failures get mode None.
    """
    best = None
    for i in before.movable_links:
        jb, ja = before.joints[i], after.joints[i]
        span = jb.hi - jb.lo
        if span <= 0:
            continue
        rel = (ja.value - jb.value) / span
        if abs(rel) >= success_fraction:
            if best is None or abs(rel) > best[0] + 1e-12:
                best = (abs(rel), i, 1 if rel > 0 else -1)
    if best is None:
        return False, None
    return True, (best[1], best[2])


# ---------------------------------------------------------------------------
# category builders

def _jitter(rng, lo=0.92, hi=1.08):
    return float(rng.uniform(lo, hi))


_IDQ = (1.0, 0.0, 0.0, 0.0)


def _box(params, pos):
    return SdfPrimitive("box", params, pos, _IDQ)


def _cyl(radius, half_h, pos):
    return SdfPrimitive("cylinder", (radius, half_h, 0.0), pos, _IDQ)


def _build_cabinet_prismatic(rng):
    s = _jitter(rng)
    bw, bd, bh = 0.21 * s, 0.16 * s, 0.17 * s
    panel = (0.18 * s, 0.015, 0.075 * s)
    z_top, z_bot = 0.078 * s, -0.078 * s
    body = LinkGeometry("body", -1, (_box((bw, bd, bh), (0, 0, 0)),))
    links, joints = [body], [None]
    face_y = bd + 2 * panel[1]
    # top drawer: a thin pull rail runs down the front and overhangs the
    # lower bay, so graspable contacts spread along z toward the lower drawer
    ridge = (0.03, 0.004, 0.08 * s)
    top_prims = (
        _box(panel, (0, bd + panel[1], z_top)),
        _box((0.165 * s, 0.08 * s, 0.06 * s), (0, 0.08 * s, z_top)),
        _box(ridge, (0, face_y + ridge[1], 0.02 * s)),
    )
    top_handle = HandleRegion((0, face_y, -0.02 * s), 0.09 * s, (0, 1, 0), 85.0)
    links.append(LinkGeometry("drawer0", 0, top_prims, top_handle))
    joints.append(JointSpec(PRISMATIC, (0, 1, 0), (0, bd + panel[1], z_top),
                            0.0, 0.2 * s, 0.0))
    # bottom drawer: plain front with a recessed finger latch strictly behind
    # the face plane; surface points never fall inside the latch ball, only a
    # deliberately placed, well aligned grasp reaches it
    bot_prims = (_box(panel, (0, bd + panel[1], z_bot)),)
    bot_handle = HandleRegion((0, bd + 0.004, -0.06 * s), 0.022, (0, 1, 0), 60.0)
    links.append(LinkGeometry("drawer1", 0, bot_prims, bot_handle))
    joints.append(JointSpec(PRISMATIC, (0, 1, 0), (0, bd + panel[1], z_bot),
                            0.0, 0.2 * s, 0.0))
    return links, joints, (0.0, 0.0, bh + 0.01)


def _build_cabinet_revolute(rng):
    s = _jitter(rng)
    bw, bd, bh = 0.21 * s, 0.16 * s, 0.24 * s
    body = LinkGeometry("body", -1, (_box((bw, bd, bh), (0, 0, 0)),))
    door = (0.19 * s, 0.015, 0.22 * s)
    door_y = bd + door[1]
    bar = (0.012, 0.022, 0.055 * s)
    prims = (
        _box(door, (0, door_y, 0)),
        _box(bar, (0.155 * s, door_y + door[1] + bar[1], 0)),
    )
    handle = HandleRegion((0.155 * s, door_y + door[1] + bar[1], 0), 0.075, (0, 1, 0))
    links = [body, LinkGeometry("door", 0, prims, handle)]
    joints = [None, JointSpec(REVOLUTE, (0, 0, 1), (-door[0], door_y, 0), 0.0, 1.4, 0.0)]
    return links, joints, (0.0, 0.0, bh + 0.01)


def _build_faucet(rng):
    s = _jitter(rng)
    base_h = 0.10 * s
    neck_top = 0.30 * s
    lever_len = 0.085 * s
    base = LinkGeometry("base", -1, (
        _cyl(0.055 * s, base_h, (0, 0, base_h)),
        _cyl(0.02 * s, 0.05 * s, (0, 0, base_h * 2 + 0.05 * s)),
    ))
    lz = neck_top
    prims = (
        _cyl(0.024 * s, 0.02, (0, 0, lz)),
        _box((lever_len, 0.016, 0.016), (0.02 + lever_len, 0, lz)),
    )
    tip = (0.02 + 2 * lever_len - 0.02 * s, 0, lz)
    handle = HandleRegion(tip, 0.05, (0, 0, 1))
    links = [base, LinkGeometry("lever", 0, prims, handle)]
    joints = [None, JointSpec(REVOLUTE, (0, 0, 1), (0, 0, lz), -0.9, 0.9, 0.0)]
    return links, joints, (0.0, 0.0, 0.0)


def _build_switch(rng):
    s = _jitter(rng)
    ph = 0.17 * s
    pz = 0.32 * s
    plate = LinkGeometry("plate", -1, (
        _box((0.05, 0.05, 0.075 * s), (0, 0, 0.075 * s)),
        _box((0.13 * s, 0.018, ph), (0, 0, pz)),
    ))
    lever = (0.016, 0.045 * s, 0.016)
    ly = 0.018 + lever[1]
    prims = (_box(lever, (0, ly, pz)),)
    handle = HandleRegion((0, ly + lever[1] * 0.7, pz), 0.05, (0, 1, 0))
    links = [plate, LinkGeometry("toggle", 0, prims, handle)]
    joints = [None, JointSpec(REVOLUTE, (1, 0, 0), (0, 0.018, pz), -0.45, 0.45, 0.0)]
    return links, joints, (0.0, 0.0, 0.0)


def _build_fridge(rng):
    s = _jitter(rng)
    bw, bd, bh = 0.2 * s, 0.17 * s, 0.3 * s
    body = LinkGeometry("body", -1, (_box((bw, bd, bh), (0, 0, 0)),))
    door = (0.19 * s, 0.015, 0.28 * s)
    door_y = bd + door[1]
    bar = (0.012, 0.022, 0.055 * s)
    prims = (
        _box(door, (0, door_y, 0)),
        _box(bar, (-0.155 * s, door_y + door[1] + bar[1], 0)),
    )
    handle = HandleRegion((-0.155 * s, door_y + door[1] + bar[1], 0), 0.075, (0, 1, 0))
    links = [body, LinkGeometry("door", 0, prims, handle)]
    # hinge on the +x edge; the door opens with negative rotation
    joints = [None, JointSpec(REVOLUTE, (0, 0, 1), (door[0], door_y, 0), -1.4, 0.0, 0.0)]
    return links, joints, (0.0, 0.0, bh + 0.01)


def _build_window(rng):
    s = _jitter(rng)
    fw = 0.26 * s
    frame = LinkGeometry("frame", -1, (
        _box((fw, 0.03, 0.02), (0, 0, 0.02)),
        _box((fw, 0.012, 0.21 * s), (0, 0, 0.25 * s)),
    ))
    pane = (0.125 * s, 0.014, 0.19 * s)
    px = -fw / 2.0
    pz = 0.25 * s
    bar = (0.014, 0.018, 0.05 * s)
    by = 0.012 + 2 * pane[1] + bar[1]
    prims = (
        _box(pane, (px, 0.012 + pane[1], pz)),
        _box(bar, (px + pane[0] * 0.7, by, pz)),
    )
    handle = HandleRegion((px + pane[0] * 0.7, by, pz), 0.06, (0, 1, 0))
    links = [frame, LinkGeometry("pane", 0, prims, handle)]
    joints = [None, JointSpec(PRISMATIC, (1, 0, 0), (px, 0, pz), 0.0, fw * 0.9, 0.0)]
    return links, joints, (0.0, 0.0, 0.0)


_BUILDERS = {
    "cabinet-prismatic": _build_cabinet_prismatic,
    "cabinet-revolute": _build_cabinet_revolute,
    "faucet": _build_faucet,
    "switch": _build_switch,
    "fridge": _build_fridge,
    "window": _build_window,
}


def make_object(category, variant_seed, init_fractions=None):
    """Deterministic object instance; init_fractions position each joint in [0,1] of its range."""
    if category not in _BUILDERS:
        raise DataError("unknown category %r (have %s)" % (category, ", ".join(CATEGORIES)))
    rng = np.random.default_rng([_CATEGORY_IDS[category], int(variant_seed)])
    links, joints, base = _BUILDERS[category](rng)
    obj = ArticulatedObject(category, int(variant_seed), base, tuple(links), tuple(joints))
    if init_fractions is not None:
        if len(init_fractions) != len(obj.movable_links):
            raise DataError("expected %d init fractions for %s, got %d"
                            % (len(obj.movable_links), category, len(init_fractions)))
        vals = []
        for frac, i in zip(init_fractions, obj.movable_links):
            j = obj.joints[i]
            vals.append(j.lo + float(frac) * (j.hi - j.lo))
        obj = with_joint_values(obj, vals)
    return obj


# ---------------------------------------------------------------------------
# plain-text object description round-trip

def dumps_object(obj):
    out = io.StringIO()
    w = out.write
    w("object v1\n")
    w("category %s\n" % obj.category)
    w("variant %d\n" % obj.variant_seed)
    w("base %r %r %r\n" % tuple(float(x) for x in obj.base_pos))
    for i, link in enumerate(obj.links):
        w("link %s parent %d\n" % (link.name, link.parent))
        for p in link.primitives:
            w("  prim %s %s %s %s\n" % (p.kind, _fmt(p.params), _fmt(p.pos), _fmt(p.quat)))
        if link.handle is not None:
            h = link.handle
            w("  handle %s %r %s %r\n" % (_fmt(h.center), float(h.radius),
                                          _fmt(h.normal), float(h.cone_deg)))
        j = obj.joints[i]
        if j is not None:
            w("  joint %s axis %s anchor %s limits %r %r value %r\n"
              % (j.kind, _fmt(j.axis), _fmt(j.anchor),
                 float(j.lo), float(j.hi), float(j.value)))
    return out.getvalue()


def _fmt(a):
    return ",".join(repr(float(x)) for x in a)


def _parse_vec(s):
    return tuple(float(x) for x in s.split(","))


def loads_object(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split() != ["object", "v1"]:
        raise DataError("not an object description")
    category = variant = base = None
    links, joints = [], []
    cur_prims, cur_handle, cur_joint, cur_name, cur_parent = [], None, None, None, None

    def flush():
        if cur_name is None:
            return
        links.append(LinkGeometry(cur_name, cur_parent, tuple(cur_prims), cur_handle))
        joints.append(cur_joint)

    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "category":
            category = tok[1]
        elif tok[0] == "variant":
            variant = int(tok[1])
        elif tok[0] == "base":
            base = (float(tok[1]), float(tok[2]), float(tok[3]))
        elif tok[0] == "link":
            flush()
            cur_name, cur_parent = tok[1], int(tok[3])
            cur_prims, cur_handle, cur_joint = [], None, None
        elif tok[0] == "prim":
            cur_prims.append(SdfPrimitive(tok[1], _parse_vec(tok[2]),
                                          _parse_vec(tok[3]), _parse_vec(tok[4])))
        elif tok[0] == "handle":
            cone = float(tok[4]) if len(tok) > 4 else GRASP_CONE_DEG
            cur_handle = HandleRegion(_parse_vec(tok[1]), float(tok[2]),
                                      _parse_vec(tok[3]), cone)
        elif tok[0] == "joint":
            cur_joint = JointSpec(tok[1], _parse_vec(tok[3]), _parse_vec(tok[5]),
                                  float(tok[7]), float(tok[8]), float(tok[10]))
        else:
            raise DataError("bad line in object description: %r" % (ln,))
    flush()
    if category is None or variant is None or base is None:
        raise DataError("object description missing header fields")
    return ArticulatedObject(category, variant, base, tuple(links), tuple(joints))
