import csv
import json
import os

import numpy as np
import pytest
import yaml

from lfcombat import arena as ar
from lfcombat import checkpoint
from lfcombat.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, LONG_HEADER, OUT_ENV, TOURNAMENT_FIELDS, main, read_csv
from lfcombat.lfmappo import METRIC_FIELDS

TINY = {
    "arena": {"team_size": 2, "group_size": 2, "spawn_x": [-4000.0, -2500.0], "spawn_y": [-2000.0, 2000.0],
              "spawn_z": [6000.0, 8000.0], "t_limit": 20.0},
    "model": {"hidden": [16, 16]},
    "train": {"n_arenas": 1, "steps_per_arena": 30, "minibatch_size": 32, "iters": 3, "checkpoint_every": 1,
              "eval_every": 0},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return str(p)


def train(cfg_path, out, *extra):
    code = main(["train", "--config", cfg_path, "--out", str(out), *extra])
    assert code == EXIT_OK
    (run_dir,) = [d for d in os.listdir(out) if not d.startswith(".")]
    return os.path.join(out, run_dir)


def files_in(d):
    return sorted(os.listdir(d))


def test_one_iteration_gives_one_metrics_row(cfg_path, tmp_path):
    run = train(cfg_path, tmp_path / "o", "--iters", "1", "--seed", "1")
    header, rows = read_csv(os.path.join(run, "metrics.csv"))
    assert tuple(header) == METRIC_FIELDS and len(rows) == 1 and rows[0][0] == "0"
    assert run.endswith("-s1")
    assert {"config.yaml", "metrics.csv", "final.lfc", "summary.yaml", "ckpt_00000.lfc"} <= set(files_in(run))


def test_every_output_file_carries_run_header(cfg_path, tmp_path):
    run = train(cfg_path, tmp_path / "o", "--iters", "1")
    _, meta = checkpoint.load(os.path.join(run, "final.lfc"))
    expected = f"# run_id={meta['run_id']} config_hash={meta['config_hash']}"
    for name in ("config.yaml", "metrics.csv", "summary.yaml"):
        assert open(os.path.join(run, name)).readline().strip() == expected
    ev = tmp_path / "ev"
    assert main(["eval", os.path.join(run, "final.lfc"), "--vs", "scripted:straight_line", "-n", "2", "--records",
                 "--out", str(ev)]) == EXIT_OK
    for name in files_in(ev):
        assert open(ev / name).readline().strip() == expected


def test_same_seed_runs_give_identical_outputs(cfg_path, tmp_path):
    a = train(cfg_path, tmp_path / "a", "--seed", "3")
    b = train(cfg_path, tmp_path / "b", "--seed", "3")
    for name in ("metrics.csv", "final.lfc", "ckpt_00001.lfc"):
        assert open(os.path.join(a, name), "rb").read() == open(os.path.join(b, name), "rb").read()
    c = train(cfg_path, tmp_path / "c", "--seed", "4")
    assert open(os.path.join(a, "metrics.csv")).read() != open(os.path.join(c, "metrics.csv")).read()


def test_resume_with_no_iterations_is_a_no_op(cfg_path, tmp_path):
    run = train(cfg_path, tmp_path / "o", "--iters", "2")
    ckpt = os.path.join(run, "ckpt_00001.lfc")
    before = open(ckpt, "rb").read()
    assert main(["train", "--resume", ckpt, "--iters", "0"]) == EXIT_OK
    t0, m0 = checkpoint.load(ckpt)
    t1, m1 = checkpoint.load(os.path.join(run, "final.lfc"))
    assert open(ckpt, "rb").read() == before
    assert t0.keys() == t1.keys() and all(t0[k].tobytes() == t1[k].tobytes() for k in t0)
    assert m1["iteration"] == m0["iteration"] == 1


def test_resume_continues_like_an_uninterrupted_run(cfg_path, tmp_path):
    full = train(cfg_path, tmp_path / "full")
    part = train(cfg_path, tmp_path / "part", "--iters", "2")
    assert main(["train", "--resume", os.path.join(part, "ckpt_00001.lfc")]) == EXIT_OK
    for name in ("metrics.csv", "final.lfc"):
        assert open(os.path.join(full, name), "rb").read() == open(os.path.join(part, name), "rb").read()


def test_config_errors_exit_2_with_field_diagnostics(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"train": {"gamma": 3.0, "clip_epsilon": 0.0}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "train.gamma" in err and "train.clip_epsilon" in err
    bad.write_text(yaml.safe_dump({"train": {"lern_rate": 1}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "train.lern_rate: unknown key" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_output_root_precedence(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["train", "--config", cfg_path, "--iters", "0"]) == EXIT_OK
    assert len(os.listdir(tmp_path / "env")) == 1
    assert main(["train", "--config", cfg_path, "--iters", "0", "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert len(os.listdir(tmp_path / "flag")) == 1


@pytest.fixture
def trained(cfg_path, tmp_path):
    return os.path.join(train(cfg_path, tmp_path / "o", "--iters", "1"), "final.lfc")


def test_eval_report_counts(trained, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", trained, "--vs", "scripted:straight_line", "-n", "4", "--out", str(out)]) == EXIT_OK
    header, rows = read_csv(str(out / "tournament_scripted_straight_line.csv"))
    assert tuple(header) == TOURNAMENT_FIELDS
    (row,) = rows
    assert sum(int(x) for x in row[1:4]) == 4
    assert sum(float(x) for x in row[4:]) == 1.0


def test_mirrored_self_play_eval_draws(trained, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", trained, "--vs", trained, "-n", "8", "--mirrored", "--out", str(out), "--name", "self.csv"]) \
        == EXIT_OK
    _, (row,) = read_csv(str(out / "self.csv"))
    assert row[2] == "8" and float(row[5]) == 1.0


def test_missing_checkpoint_exits_3_without_files(tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["eval", str(tmp_path / "nope.lfc"), "--vs", "scripted:pure_pursuit", "--out", str(out)]) \
        == EXIT_RUNTIME
    assert "checkpoint not found" in capsys.readouterr().err
    assert not out.exists()


def test_hash_mismatch_refused_unless_forced(cfg_path, tmp_path, trained):
    other = train(cfg_path, tmp_path / "p", "--iters", "0", "--set", "arena.hit_range=250")
    out = tmp_path / "ev"
    args = ["eval", trained, "--vs", os.path.join(other, "final.lfc"), "-n", "1", "--out", str(out)]
    assert main(args) == EXIT_RUNTIME and not out.exists()
    assert main(args + ["--force"]) == EXIT_OK


def test_export_round_trip_and_schema(trained, tmp_path):
    ev = tmp_path / "ev"
    assert main(["eval", trained, "--vs", "scripted:pure_pursuit", "-n", "1", "--records", "--out", str(ev)]) \
        == EXIT_OK
    (rec_name,) = [f for f in files_in(ev) if f.startswith("match_")]
    rec_path = ev / rec_name
    text = open(rec_path).read()
    record = json.loads(text.split("\n", 1)[1])
    assert main(["export", str(rec_path), "--out", str(tmp_path / "x")]) == EXIT_OK
    header, rows = read_csv(str(tmp_path / "x" / rec_name.replace(".json", "_trajectory.csv")))
    assert header == ar.TRAJECTORY_HEADER
    assert header == ["time", "uav_id", "team", "role", "px", "py", "pz", "v", "phi", "theta", "psi", "alive",
                      "target_id", "reward"]
    assert len(rows) == len(record["trajectory"])
    for got, want in zip(rows, record["trajectory"]):
        for g, w in zip(got, want):
            if isinstance(w, float):
                assert float(g) == w  # repr round-trips float64 exactly
            else:
                assert g == str(w)
    assert main(["export", str(rec_path), "--format", "long", "--out", str(tmp_path / "x")]) == EXIT_OK
    header, rows = read_csv(str(tmp_path / "x" / rec_name.replace(".json", "_long.csv")))
    assert tuple(header) == LONG_HEADER
    assert len(rows) == len(record["trajectory"]) * (len(ar.TRAJECTORY_HEADER) - 4)


def test_export_rejects_unknown_format(trained, tmp_path, capsys):
    assert main(["export", str(tmp_path / "whatever.json"), "--format", "parquet"]) == EXIT_CONFIG
    assert "trajectory, long" in capsys.readouterr().err


def test_inspect(trained, capsys):
    assert main(["inspect", trained]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["iteration"] == 0 and info["variant"] == "lfmappo" and info["parameters"] > 0
    assert "sub_0/log_std" in info["tensors"]
