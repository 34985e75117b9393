"""Session fixtures: the desk-scale corpus and the model trained on it.

Collecting the corpus and training on it dominate the end-to-end test
runtime, so both are session scoped and shared by every test that needs
them (the behavioral acceptance checks).
"""

import time

import numpy as np
import pytest

from artimode import datagen as D
from artimode import model as M
from artimode import nets
from artimode import perception as P

CORPUS_SEED = 100

CORPUS_CAMERA = 64

TIMINGS = {}


def corpus_slots():
    """2 training categories x 4 instances x 2 initial states."""
    slots = []
    for v in range(4):
        for st in ((0.0, 0.0), (0.4, 0.4)):
            slots.append(D.Slot("cabinet-prismatic", v, st))
        for st in ((0.0,), (0.4,)):
            slots.append(D.Slot("cabinet-revolute", v, st))
    return slots


def unseen_state_slots():
    """The training objects at joint states never seen in the corpus."""
    out = []
    for v in range(4):
        out.append(D.Slot("cabinet-prismatic", v, (0.2, 0.2)))
        out.append(D.Slot("cabinet-revolute", v, (0.7,)))
    return out


def heldout_slots():
    """A category absent from the corpus (toggle-lever objects)."""
    return [D.Slot("switch", v, (0.0,)) for v in range(4)]


@pytest.fixture(scope="session")
def corpus_dataset():
    # 16 slots x 4 rounds x 47 proposals per slot-round, about 3000 records
    cfg = D.CollectConfig(rounds=4, m=47, eps=0.3,
                          width=CORPUS_CAMERA, height=CORPUS_CAMERA,
                          ae_steps=400)
    t0 = time.monotonic()
    ds = D.adaptive_collect(corpus_slots(), cfg, seed=CORPUS_SEED)
    TIMINGS["collect_s"] = time.monotonic() - t0
    return ds


@pytest.fixture(scope="session")
def corpus_model(corpus_dataset):
    m = M.InteractionModel(np.random.default_rng([CORPUS_SEED, 1]),
                           e_dim=corpus_dataset.e_dim)
    t0 = time.monotonic()
    M.train(m, corpus_dataset, M.TrainConfig(steps=1500, batch=32),
            seed=CORPUS_SEED)
    TIMINGS["train_s"] = time.monotonic() - t0
    return m


@pytest.fixture(scope="session")
def corpus_ae(corpus_dataset):
    ae = P.DepthAutoencoder(np.random.default_rng(0),
                            e_dim=corpus_dataset.e_dim, side=CORPUS_CAMERA)
    nets.load_state(ae.params(), corpus_dataset.ae_state)
    return ae
