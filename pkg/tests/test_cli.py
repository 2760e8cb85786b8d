import json

import numpy as np
import pytest

from embodiment_imitation.cli import EXIT_USAGE, RunManifest, main, parse_spec
from embodiment_imitation.distance import ROTATION_ONLY, distance_between
from embodiment_imitation.dynamics import read_trajectory_csv
from embodiment_imitation.embodiment import planar_chain, save_spec
from embodiment_imitation.pose import PoseMap, solve_pose
from embodiment_imitation.ppo import Agent


@pytest.fixture
def specs(tmp_path):
    e, l = tmp_path / "e.json", tmp_path / "l.json"
    save_spec(planar_chain(2), e)
    save_spec(planar_chain(2), l)
    return str(e), str(l)


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if code == 0 else None), out.err


def test_pose_imitate_matches_library(tmp_path, specs, capsys):
    e, l = specs
    code, res, _ = run(["pose-imitate", "--expert", e, "--learner", l, "--q", "1.5,-1.5",
                        "--weights", "0,1,0,0", "--corr", "static", "--init", "0.2,0.1",
                        "--out-dir", tmp_path / "out"], capsys)
    assert code == 0
    direct = solve_pose(planar_chain(2), planar_chain(2), [1.5, -1.5], ROTATION_ONLY, "static",
                        init=np.array([0.2, 0.1]))
    assert res["distance"] == direct.distance
    assert res["q_hat"] == direct.q.tolist()
    saved = json.loads((tmp_path / "out" / "pose.json").read_text())
    assert saved["distance"] == direct.distance
    manifest = RunManifest.read(tmp_path / "out" / "manifest.json")
    assert manifest.command == "pose-imitate"
    assert e in manifest.inputs and len(manifest.outputs) == 1


def test_pose_imitate_scan_shape(tmp_path, specs, capsys):
    e, l = specs
    code, res, _ = run(["pose-imitate", "--expert", e, "--learner", l, "--q", "1.5,-1.5",
                        "--scan", 360, "--out-dir", tmp_path], capsys)
    assert code == 0
    data = np.loadtxt(tmp_path / "scan.csv", delimiter=",", skiprows=1)
    assert data.shape == (360 * 360, 3)
    assert res["scan"]["local_minima"] == 1


def test_missing_file_exit_code(tmp_path, capsys):
    code, _, err = run(["pose-imitate", "--expert", tmp_path / "nope.json", "--learner", "planar:2",
                        "--q", "0,0", "--out-dir", tmp_path], capsys)
    assert code == EXIT_USAGE
    assert "nope.json" in err


def test_invalid_spec_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"links": [{"length": -1}]}')
    code, _, err = run(["distance", "--expert", bad, "--learner", "planar:2", "--q", "0",
                        "--q-hat", "0,0", "--out-dir", tmp_path], capsys)
    assert code == EXIT_USAGE and "invalid spec" in err
    code, _, _ = run(["distance", "--expert", "planar:x", "--learner", "planar:2", "--q", "0",
                      "--q-hat", "0,0", "--out-dir", tmp_path], capsys)
    assert code == EXIT_USAGE
    code, _, _ = run(["distance", "--expert", "planar:2", "--learner", "planar:2", "--q", "0",
                      "--q-hat", "0,0", "--out-dir", tmp_path], capsys)
    assert code == EXIT_USAGE


def test_spec_shorthands():
    assert parse_spec("planar:3:lock=2").locked == frozenset({2})
    np.testing.assert_allclose(parse_spec("planar:2:lengths=0.3,0.7").lengths, [0.3, 0.7])
    assert parse_spec("arm7").n == 7


def test_distance_command(tmp_path, capsys):
    code, res, _ = run(["distance", "--expert", "planar:2", "--learner", "planar:3",
                        "--q", "0.3,0.2", "--q-hat", "0.1,0.4,-0.2", "--weights", "1,1",
                        "--corr", "softmin", "--out-dir", tmp_path], capsys)
    assert code == 0
    from embodiment_imitation.distance import DistanceWeights
    direct = distance_between(planar_chain(2), [0.3, 0.2], planar_chain(3), [0.1, 0.4, -0.2],
                              DistanceWeights(1, 1), "softmin")
    assert res["distance"] == pytest.approx(float(direct), abs=1e-15)
    assert len((tmp_path / "distance.csv").read_text().splitlines()) == 7


def test_scan_command(tmp_path, capsys):
    code, res, _ = run(["scan", "--expert", "planar:2", "--learner", "planar:2", "--q", "1.5,-1.5",
                        "--res", 40, "--weights", "1.5,1", "--corr", "binary", "--out-dir", tmp_path],
                       capsys)
    assert code == 0 and res["local_minima"] >= 2


def test_global_flags_either_side(tmp_path, capsys):
    args = ["pose-imitate", "--expert", "planar:2", "--learner", "planar:2", "--q", "1,1"]
    c1, r1, _ = run(["--seed", 5, "--out-dir", tmp_path / "a"] + args, capsys)
    c2, r2, _ = run(args + ["--seed", 5, "--out-dir", tmp_path / "b"], capsys)
    c3, r3, _ = run(args + ["--seed", 6, "--out-dir", tmp_path / "c"], capsys)
    assert c1 == c2 == c3 == 0
    assert r1 == r2
    assert r1["q_hat"] != r3["q_hat"]


def test_train_map_zero_epochs_and_leakage(tmp_path, capsys):
    out = tmp_path / "map"
    code, res, _ = run(["train-map", "--expert", "planar:3", "--learner", "planar:2", "--epochs", 0,
                        "--samples", 64, "--minibatches", 4, "--test-samples", 16, "--out-dir", out],
                       capsys)
    assert code == 0
    model = PoseMap.load(out / "model.json")
    seed = json.loads((out / "model.json").read_text())["train_seed"]
    fresh = PoseMap(model.expert, model.learner, seed=seed)
    for a, b in zip(model.net.params, fresh.net.params):
        np.testing.assert_array_equal(a, b)
    assert len((out / "curve.csv").read_text().splitlines()) == 2
    assert (out / "curve.svg").read_text().startswith("<svg")
    with pytest.warns(UserWarning, match="training set"):
        code, res, err = run(["eval-map", "--model", out / "model.json", "--test", "same",
                              "--out-dir", tmp_path / "ev"], capsys)
    assert code == 0 and res["leakage"] and res["n"] == 64
    assert "leakage" in err
    code, res, _ = run(["eval-map", "--model", out / "model.json", "--test", out / "test_set.csv",
                        "--out-dir", tmp_path / "ev2"], capsys)
    assert code == 0 and res["n"] == 16 and not res["leakage"]


def test_record_train_eval_rl(tmp_path, capsys):
    rec = tmp_path / "rec"
    code, res, _ = run(["record-expert", "--n", 124, "--seed", 7, "--out-dir", rec], capsys)
    assert code == 0
    files = sorted(rec.glob("traj_*.csv"))
    assert len(files) == 124 and (rec / "manifest.json").exists()
    assert res["settled"] == 124
    # keep one demonstration out of training
    train_dir = tmp_path / "train"
    train_dir.mkdir()
    for f in files[:3]:
        (train_dir / f.name).write_bytes(f.read_bytes())
    pol = tmp_path / "pol"
    code, res, _ = run(["train-rl", "--expert", "planar:2", "--learner", "planar:2", "--trajs",
                        train_dir, "--gamma", 0.4, "--steps", 256, "--rollout", 128, "--num-envs", 4,
                        "--epochs", 1, "--out-dir", pol], capsys)
    assert code == 0 and res["trajectories"] == 3
    agent, env_cfg = Agent.load(pol / "policy.json")
    assert agent.cfg.gamma == 0.4
    assert len((pol / "curve.csv").read_text().splitlines()) == 3
    code, res, _ = run(["eval-rl", "--policy", pol / "policy.json", "--traj", files[-1],
                        "--out-dir", tmp_path / "ev"], capsys)
    assert code == 0 and res["steps"] == 50
    data = np.loadtxt(tmp_path / "ev" / "eval.csv", delimiter=",", skiprows=1)
    assert data.shape == (50, 3)
    np.testing.assert_array_equal(data[:, 2], -data[:, 1])
    code, zero, _ = run(["eval-rl", "--policy", "zero", "--traj", files[-1], "--expert", "planar:2",
                         "--learner", "planar:2", "--out-dir", tmp_path / "ev0"], capsys)
    assert code == 0
    code, _, _ = run(["eval-rl", "--policy", "zero", "--traj", files[-1], "--out-dir", tmp_path],
                     capsys)
    assert code == EXIT_USAGE


def test_trajectory_round_trip_precision(tmp_path, capsys):
    from embodiment_imitation.dynamics import DynamicsModel, record_many
    run(["record-expert", "--spec", "planar:2", "--n", 2, "--seed", 3, "--out-dir", tmp_path], capsys)
    seed = RunManifest.read(tmp_path / "manifest.json")
    goal_seed = json.loads((tmp_path / "record.json").read_text())["goal_seed"]
    trajs = record_many(DynamicsModel(planar_chain(2), friction=0.05), 2, goal_seed)
    back = read_trajectory_csv(tmp_path / "traj_001.csv")
    assert np.max(np.abs(back.q - trajs[1].q)) <= 1e-12
    assert seed.seeds == {"seed": 3}


def test_manifest_replay_is_bit_identical(tmp_path, capsys):
    out = tmp_path / "run"
    code, _, _ = run(["train-map", "--expert", "planar:3", "--learner", "planar:2", "--epochs", 2,
                      "--samples", 64, "--minibatches", 4, "--test-samples", 16, "--seed", 9,
                      "--out-dir", out], capsys)
    assert code == 0
    first = RunManifest.read(out / "manifest.json")
    saved = {p: (tmp_path / "run" / p.split("/")[-1]).read_bytes() for p in first.outputs}
    (out / "copy.json").write_text((out / "manifest.json").read_text())
    code, _, _ = run(["--manifest", out / "copy.json"], capsys)
    assert code == 0
    second = RunManifest.read(out / "manifest.json")
    assert second.outputs == first.outputs
    for p, data in saved.items():
        assert (tmp_path / "run" / p.split("/")[-1]).read_bytes() == data
    assert main(["--manifest", str(tmp_path / "missing.json")]) == EXIT_USAGE


def test_no_command_prints_help(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err
