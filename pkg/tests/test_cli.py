import json

import numpy as np
import pytest

from mgmap.harness.cli import main
from mgmap.mapping import write_grid

SMALL = ["--set", "world.scenes=1", "--set", "world.episodes_per_scene=2", "--set", "eval.scenes=1",
         "--set", "eval.episodes_per_scene=2", "--set", "map.m=16", "--set", "map.cell=0.5", "--set", "map.c=8",
         "--set", "policy.gru1=16", "--set", "policy.gru2=16", "--set", "train.teacher_epochs=1",
         "--set", "train.dagger_iters=1", "--set", "train.trajectories=2", "--set", "train.epochs_per_iter=1",
         "--set", "sim.budget=40"]


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["no-such-command"]) == 1
    assert main(["eval", "--set", "bogus.key=1", "--oracle", "--out", str(tmp_path)]) == 1
    assert main(["eval", "--out", str(tmp_path)]) == 1  # neither --checkpoint nor --oracle


def test_data_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.mgt"
    bad.write_bytes(b"MGT1\x00\x00")
    assert main(["eval", "--checkpoint", str(bad), "--out", str(tmp_path / "o")] + SMALL) == 2
    assert main(["inspect", str(tmp_path / "missing.mgg")]) == 2
    assert main(["gen-episodes", "--out", str(tmp_path / "empty")]) == 2


def test_pipeline_round_trip(tmp_path):
    d, run, ev1, ev2 = (str(tmp_path / n) for n in ("data", "run", "ev1", "ev2"))
    assert main(["gen-world", "--out", d] + SMALL) == 0
    assert main(["gen-episodes", "--out", d] + SMALL) == 0
    assert main(["train", "--data", d, "--out", run] + SMALL) == 0
    ck = str(tmp_path / "run" / "checkpoint.mgt")
    assert main(["dagger", "--data", d, "--checkpoint", ck, "--out", str(tmp_path / "run2")] + SMALL) == 0
    for out in (ev1, ev2):
        assert main(["eval", "--seed", "1", "--checkpoint", ck, "--out", out] + SMALL) == 0
    assert (tmp_path / "ev1" / "report.json").read_bytes() == (tmp_path / "ev2" / "report.json").read_bytes()
    rep = json.loads((tmp_path / "ev1" / "report.json").read_text())
    assert rep["config"]["seed"] == 1
    assert main(["inspect", ck, "--out", str(tmp_path / "insp")]) == 0
    assert (tmp_path / "insp" / "checkpoint_tensors.csv").exists()


def test_set_flips_ground_truth_mode(tmp_path):
    args = ["eval", "--oracle", "--out", str(tmp_path)] + SMALL + ["--set", "sim.budget=500"]
    assert main(args + ["--set", "supervision.gt_mode=hard"]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["config"]["supervision.gt_mode"] == "hard" and rep["metrics"]["SR"] == 1.0


def test_inspect_grid_exports(tmp_path):
    g = np.arange(12.0).reshape(3, 4)
    write_grid(tmp_path / "g.mgg", g)
    assert main(["inspect", str(tmp_path / "g.mgg"), "--out", str(tmp_path / "csv")]) == 0
    np.testing.assert_allclose(np.loadtxt(tmp_path / "csv" / "g_c0.csv", delimiter=","), g)
    assert main(["inspect", str(tmp_path / "g.mgg"), "--format", "pgm", "--out", str(tmp_path / "img")]) == 0
    assert (tmp_path / "img" / "g_c0.pgm").read_bytes().startswith(b"P5 4 3 255\n")


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck", "--cases", "20"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "policy_end_to_end" in out
