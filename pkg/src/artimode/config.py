"""Run configuration.

One JSON document drives a whole run: the object roster, camera size, the
collection loop, model dimensions, training budgets, and evaluation. Every
command echoes the resolved document into its output directory so a result
can always be traced back to the exact settings and seed that produced it.

All randomness flows from the single seed through named substreams (the
collection, training, and evaluation modules each fold their own stream ids
into it), so the stages can be re-run independently without perturbing one
another.
"""

import dataclasses
import json

from . import datagen
from . import kinematics
from . import model as modelmod
from . import perception


class ConfigError(ValueError):
    pass


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _from_dict(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError("%s: expected an object, got %r" % (where, type(d).__name__))
    known = _fields(cls)
    extra = set(d) - known
    if extra:
        raise ConfigError("%s: unknown keys %s" % (where, ", ".join(sorted(extra))))
    return cls(**d)


@dataclasses.dataclass
class RosterEntry:
    """One category with the variants and initial states to instantiate."""
    category: str
    variants: list
    states: list            # list of fraction lists, one per initial state

    def validate(self, where):
        if self.category not in kinematics.CATEGORIES:
            raise ConfigError("%s: unknown category %r (have %s)"
                              % (where, self.category, ", ".join(kinematics.CATEGORIES)))
        if not self.variants or not self.states:
            raise ConfigError("%s: variants and states must be non-empty" % where)

    def slots(self):
        return [datagen.Slot(self.category, int(v), tuple(s))
                for v in self.variants for s in self.states]


@dataclasses.dataclass
class CameraSection:
    width: int = 96
    height: int = 96

    def validate(self):
        if self.width < 16 or self.height < 16:
            raise ConfigError("camera: images must be at least 16 pixels")
        if self.width % 16 or self.height % 16:
            raise ConfigError("camera: sides must be multiples of 16 for the encoder")


@dataclasses.dataclass
class DataSection:
    m: int = 400
    rounds: int = 4
    eps: float = 0.3
    k: int = 6
    lam_pct: float = 80.0
    ae_steps: int = 400

    def validate(self):
        if self.m < 1 or self.rounds < 1:
            raise ConfigError("data: m and rounds must be positive")
        if not 0.0 <= self.eps <= 1.0:
            raise ConfigError("data: eps must be in [0, 1]")
        if not 0.0 < self.lam_pct < 100.0:
            raise ConfigError("data: lam_pct must be a percentile in (0, 100)")
        if self.k < 1:
            raise ConfigError("data: k must be positive")


@dataclasses.dataclass
class ModelSection:
    e_dim: int = perception.E_DIM
    plane_c: int = 16
    plane_g: int = 24
    z_dim: int = modelmod.Z_DIM
    head_width: int = modelmod.HEAD_WIDTH

    def validate(self):
        for name in ("e_dim", "plane_c", "plane_g", "z_dim", "head_width"):
            if getattr(self, name) < 1:
                raise ConfigError("model: %s must be positive" % name)


@dataclasses.dataclass
class TrainSection:
    steps: int = 1500
    batch: int = 32
    lr: float = 1e-3
    beta: float = modelmod.KL_BETA
    goal_steps: int = 300   # goal-selector budget; 0 skips the selector

    def validate(self):
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("train: steps and batch must be positive")
        if self.lr <= 0:
            raise ConfigError("train: lr must be positive")
        if self.goal_steps < 0:
            raise ConfigError("train: goal_steps must be >= 0")


@dataclasses.dataclass
class EvalSection:
    trials: int = 50        # per (object, state, policy)
    temp: float = modelmod.INFER_TEMP
    samples: int = modelmod.INFER_SAMPLES

    def validate(self):
        if self.trials < 1:
            raise ConfigError("eval: trials must be positive")
        if self.samples < 1:
            raise ConfigError("eval: samples must be positive")


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    roster: list = dataclasses.field(default_factory=list)
    eval_roster: dict = dataclasses.field(default_factory=dict)
    camera: CameraSection = dataclasses.field(default_factory=CameraSection)
    data: DataSection = dataclasses.field(default_factory=DataSection)
    model: ModelSection = dataclasses.field(default_factory=ModelSection)
    train: TrainSection = dataclasses.field(default_factory=TrainSection)
    eval: EvalSection = dataclasses.field(default_factory=EvalSection)

    def validate(self):
        if not self.roster:
            raise ConfigError("roster: must list at least one category entry")
        for i, entry in enumerate(self.roster):
            entry.validate("roster[%d]" % i)
        for tier, entries in self.eval_roster.items():
            if tier not in ("unseen-states", "unseen-instances", "unseen-categories"):
                raise ConfigError("eval_roster: unknown tier %r" % tier)
            for i, entry in enumerate(entries):
                entry.validate("eval_roster[%s][%d]" % (tier, i))
        self.camera.validate()
        self.data.validate()
        self.model.validate()
        self.train.validate()
        self.eval.validate()
        return self

    def slots(self):
        return [s for entry in self.roster for s in entry.slots()]

    def eval_slots(self):
        """[(tier, slot)] pairs; falls back to the training roster for
        unseen-states when no eval roster was given."""
        if not self.eval_roster:
            return [("unseen-states", s) for s in self.slots()]
        out = []
        for tier, entries in self.eval_roster.items():
            for entry in entries:
                out.extend((tier, s) for s in entry.slots())
        return out

    def collect_config(self):
        return datagen.CollectConfig(
            rounds=self.data.rounds, m=self.data.m, eps=self.data.eps,
            k=self.data.k, lam_pct=self.data.lam_pct,
            e_dim=self.model.e_dim, width=self.camera.width,
            height=self.camera.height, ae_steps=self.data.ae_steps)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config: expected a JSON object at top level")
        known = _fields(cls)
        extra = set(d) - known
        if extra:
            raise ConfigError("config: unknown keys %s" % ", ".join(sorted(extra)))
        kw = {}
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        kw["roster"] = [_from_dict(RosterEntry, e, "roster[%d]" % i)
                        for i, e in enumerate(d.get("roster", []))]
        kw["eval_roster"] = {
            tier: [_from_dict(RosterEntry, e, "eval_roster[%s][%d]" % (tier, i))
                   for i, e in enumerate(entries)]
            for tier, entries in d.get("eval_roster", {}).items()}
        for name, sub in (("camera", CameraSection), ("data", DataSection),
                          ("model", ModelSection), ("train", TrainSection),
                          ("eval", EvalSection)):
            if name in d:
                kw[name] = _from_dict(sub, d[name], name)
        return cls(**kw)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("config: invalid JSON (%s)" % e) from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.loads(fh.read())
        except OSError as e:
            raise ConfigError("config: cannot read %s (%s)" % (path, e)) from None

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")
