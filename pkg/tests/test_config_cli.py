"""Config document handling and the four CLI subcommands end to end."""

import json
import os
import shutil

import numpy as np
import pytest

from artimode import cli
from artimode import config as C
from artimode import datagen as D
from artimode import evaluation as E
from artimode import kinematics as K
from artimode import render as R

MICRO = {
    "seed": 7,
    "roster": [{"category": "cabinet-revolute", "variants": [0],
                "states": [[0.0]]}],
    "eval_roster": {"unseen-states": [{"category": "cabinet-revolute",
                                       "variants": [0], "states": [[0.3]]}]},
    "camera": {"width": 32, "height": 32},
    "data": {"m": 40, "rounds": 2, "eps": 0.5, "ae_steps": 40},
    "train": {"steps": 30, "batch": 16, "goal_steps": 10},
    "eval": {"trials": 3, "samples": 64},
}


class TestConfig:
    def test_defaults(self):
        cfg = C.RunConfig()
        assert cfg.seed == 0
        assert cfg.camera.width == 96 and cfg.camera.height == 96
        assert cfg.train.steps == 1500 and cfg.train.goal_steps == 300
        assert cfg.data.lam_pct == 80.0

    def test_json_round_trip(self):
        cfg = C.RunConfig.from_dict(MICRO)
        again = C.RunConfig.loads(cfg.dumps())
        assert again.to_dict() == cfg.to_dict()
        assert again.seed == 7 and again.data.m == 40

    def test_unknown_keys_named(self):
        with pytest.raises(C.ConfigError, match="bogus"):
            C.RunConfig.from_dict({"bogus": 1})
        with pytest.raises(C.ConfigError, match="typo"):
            C.RunConfig.from_dict({"camera": {"typo": 32}})
        with pytest.raises(C.ConfigError, match="roster\\[0\\]"):
            C.RunConfig.from_dict({"roster": [{"category": "faucet",
                                               "variants": [0],
                                               "states": [[0.0]],
                                               "spare": 1}]})

    def test_invalid_json(self):
        with pytest.raises(C.ConfigError):
            C.RunConfig.loads("{not json")
        with pytest.raises(C.ConfigError):
            C.RunConfig.load("/nonexistent/config.json")

    def test_validation(self):
        with pytest.raises(C.ConfigError, match="roster"):
            C.RunConfig().validate()
        bad = dict(MICRO, roster=[{"category": "toaster", "variants": [0],
                                   "states": [[0.0]]}])
        with pytest.raises(C.ConfigError, match="toaster"):
            C.RunConfig.from_dict(bad).validate()
        bad = dict(MICRO, camera={"width": 33, "height": 32})
        with pytest.raises(C.ConfigError, match="multiples of 16"):
            C.RunConfig.from_dict(bad).validate()
        bad = dict(MICRO, data={"eps": 1.5})
        with pytest.raises(C.ConfigError, match="eps"):
            C.RunConfig.from_dict(bad).validate()
        bad = dict(MICRO, eval_roster={"unseen-planets": MICRO["roster"]})
        with pytest.raises(C.ConfigError, match="unseen-planets"):
            C.RunConfig.from_dict(bad).validate()

    def test_eval_slots_fallback(self):
        cfg = C.RunConfig.from_dict(dict(MICRO, eval_roster={}))
        pairs = cfg.eval_slots()
        assert pairs == [("unseen-states",
                          D.Slot("cabinet-revolute", 0, (0.0,)))]
        cfg2 = C.RunConfig.from_dict(MICRO)
        assert cfg2.eval_slots()[0][1].fractions == (0.3,)

    def test_collect_config_mapping(self):
        cc = C.RunConfig.from_dict(MICRO).collect_config()
        assert (cc.m, cc.rounds, cc.eps, cc.width, cc.ae_steps) \
            == (40, 2, 0.5, 32, 40)

    def test_save_is_sorted_json(self, tmp_path):
        path = tmp_path / "config.json"
        C.RunConfig.from_dict(MICRO).save(path)
        text = path.read_text()
        assert text.endswith("\n")
        d = json.loads(text)
        assert list(d) == sorted(d)


@pytest.fixture(scope="module")
def rundir(tmp_path_factory):
    """One gen-data + train pass shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = str(root / "micro.json")
    with open(cfg_path, "w") as fh:
        json.dump(MICRO, fh)
    out = str(root / "run")
    assert cli.main(["gen-data", "--config", cfg_path, "--out", out]) == 0
    assert cli.main(["train", "--config", cfg_path, "--out", out]) == 0
    return cfg_path, out


class TestPipeline:
    def test_gen_data_artifacts(self, rundir):
        _, out = rundir
        assert os.path.exists(os.path.join(out, "dataset.aaim"))
        assert os.path.exists(os.path.join(out, "config.json"))
        balance = open(os.path.join(out, "mode_balance.csv")).read().splitlines()
        assert balance[0] == "round,slot,category,variant,mode,count"
        assert len(balance) > 2

    def test_train_artifacts(self, rundir):
        _, out = rundir
        meta, sections = cli.read_checkpoint(os.path.join(out, "checkpoint.aaim"))
        assert meta["kind"] == "interaction-checkpoint"
        assert meta["train_steps"] == 30 and meta["goal_steps"] == 10
        prefixes = {k.split(".")[0] for k in sections}
        assert prefixes == {"enc_depth", "dec_depth", "tri_plane", "cvae",
                            "heads", "goal_selector"}
        curve = open(os.path.join(out, "train_curve.csv")).read().splitlines()
        assert len(curve) >= 2 and curve[0].startswith("step,")
        assert os.path.exists(os.path.join(out, "goal_curve.csv"))

    def test_eval_writes_report_and_heatmaps(self, rundir, capsys):
        cfg_path, out = rundir
        assert cli.main(["eval", "--config", cfg_path, "--out", out]) == 0
        msg = capsys.readouterr().out
        assert "random unseen-states:" in msg
        assert "learned unseen-states:" in msg
        assert "learned-goal unseen-states:" in msg
        rows = open(os.path.join(out, "report.csv")).read().splitlines()
        assert len(rows) == 4    # header + 3 policies
        assert os.path.exists(os.path.join(
            out, "heatmap_unseen-states_cabinet-revolute-0.ppm"))

    def test_infer_prints_action(self, rundir, capsys):
        cfg_path, out = rundir
        assert cli.main(["infer", "--config", cfg_path, "--out", out]) == 0
        msg = capsys.readouterr().out
        assert "p = (" in msg and "R = (" in msg and "F = (" in msg
        assert "outcome:" in msg

    def test_infer_with_goal_image(self, rundir, tmp_path, capsys):
        cfg_path, out = rundir
        obj = D.Slot("cabinet-revolute", 0, (0.3,)).build()
        cam = R.default_views(obj, 32, 32)[0]
        goal = E.render_goal(obj, obj.movable_links[0], 1, cam)
        goal_path = str(tmp_path / "goal.pgm")
        R.write_pgm(goal_path, goal)
        assert cli.main(["infer", "--config", cfg_path, "--out", out,
                         "--goal", goal_path]) == 0
        assert "p = (" in capsys.readouterr().out

    def test_gen_data_rerun_byte_identical(self, rundir, tmp_path):
        cfg_path, out = rundir
        with open(os.path.join(out, "dataset.aaim"), "rb") as fh:
            first = fh.read()
        out2 = str(tmp_path / "again")
        assert cli.main(["gen-data", "--config", cfg_path, "--out", out2]) == 0
        with open(os.path.join(out2, "dataset.aaim"), "rb") as fh:
            assert fh.read() == first

    def test_seed_override_lands_in_saved_config(self, rundir, tmp_path):
        cfg_path, _ = rundir
        out2 = str(tmp_path / "seeded")
        assert cli.main(["gen-data", "--config", cfg_path, "--out", out2,
                         "--seed", "99"]) == 0
        d = json.loads(open(os.path.join(out2, "config.json")).read())
        assert d["seed"] == 99


class TestFailureModes:
    def test_bad_json_config(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{oops")
        assert cli.main(["gen-data", "--config", str(p),
                         "--out", str(tmp_path / "x")]) == 2

    def test_unknown_key_config(self, tmp_path):
        p = tmp_path / "extra.json"
        p.write_text(json.dumps(dict(MICRO, mystery=1)))
        assert cli.main(["train", "--config", str(p),
                         "--out", str(tmp_path / "x")]) == 2

    def test_default_config_has_no_roster(self, tmp_path):
        assert cli.main(["gen-data", "--out", str(tmp_path / "x")]) == 2

    def test_train_without_dataset(self, rundir, tmp_path):
        cfg_path, _ = rundir
        assert cli.main(["train", "--config", cfg_path,
                         "--out", str(tmp_path / "empty")]) == 3

    def test_infer_without_checkpoint(self, rundir, tmp_path):
        cfg_path, _ = rundir
        assert cli.main(["infer", "--config", cfg_path,
                         "--out", str(tmp_path / "empty")]) == 3

    def test_eval_without_checkpoint_runs_random_only(self, rundir, tmp_path,
                                                      capsys):
        cfg_path, out = rundir
        out2 = str(tmp_path / "norandom")
        os.makedirs(out2)
        shutil.copy(os.path.join(out, "dataset.aaim"),
                    os.path.join(out2, "dataset.aaim"))
        assert cli.main(["eval", "--config", cfg_path, "--out", out2]) == 0
        msg = capsys.readouterr().out
        assert "random policy only" in msg
        rows = open(os.path.join(out2, "report.csv")).read().splitlines()
        assert len(rows) == 2
        assert ",random," in rows[1]

    def test_camera_mismatch_between_stages(self, rundir, tmp_path):
        cfg_path, out = rundir
        changed = dict(MICRO, camera={"width": 48, "height": 48})
        p = tmp_path / "wider.json"
        p.write_text(json.dumps(changed))
        assert cli.main(["train", "--config", str(p), "--out", out]) == 2

    def test_goal_infer_needs_selector_section(self, rundir, tmp_path, capsys):
        cfg_path, out = rundir
        no_goal = dict(MICRO)
        no_goal["train"] = dict(MICRO["train"], goal_steps=0)
        p = tmp_path / "nogoal.json"
        p.write_text(json.dumps(no_goal))
        out2 = str(tmp_path / "run2")
        os.makedirs(out2)
        shutil.copy(os.path.join(out, "dataset.aaim"),
                    os.path.join(out2, "dataset.aaim"))
        assert cli.main(["train", "--config", str(p), "--out", out2]) == 0
        assert not os.path.exists(os.path.join(out2, "goal_curve.csv"))
        _, sections = cli.read_checkpoint(os.path.join(out2, "checkpoint.aaim"))
        assert not any(k.startswith("goal_selector.") for k in sections)

        obj = D.Slot("cabinet-revolute", 0, (0.3,)).build()
        cam = R.default_views(obj, 32, 32)[0]
        goal_path = str(tmp_path / "goal.pgm")
        R.write_pgm(goal_path, R.render_depth(obj, cam))
        assert cli.main(["infer", "--config", str(p), "--out", out2,
                         "--goal", goal_path]) == 3
        assert "goal_selector" in capsys.readouterr().err
