import numpy as np
import pytest

from embodiment_imitation.distance import ROTATION_ONLY, DistanceWeights, grid_scan, local_minima
from embodiment_imitation.embodiment import anthropomorphic_arm, lock_joints, planar_chain
from embodiment_imitation.nn import Mlp
from embodiment_imitation.pose import (PoseMap, SolveConfig, TrainConfig, evaluate_pose_map,
                                       generate_dataset, solve_pose, train_pose_map,
                                       write_curve_csv)


def test_solve_from_expert_pose_takes_no_steps():
    spec = planar_chain(2)
    q = np.array([0.4, -1.1])
    sol = solve_pose(spec, spec, q, ROTATION_ONLY, "static", init=q)
    assert sol.iterations == 0
    assert sol.distance < 1e-15
    assert sol.converged


def test_solve_identical_chains_reaches_zero():
    spec = planar_chain(2)
    hits = [solve_pose(spec, spec, [1.5, -1.5], ROTATION_ONLY, "static",
                       SolveConfig(seed=s)).distance < 1e-3 for s in range(20)]
    assert np.mean(hits) >= 0.9


def test_solve_is_monotone():
    expert, learner = planar_chain(3), planar_chain(2)
    for seed in range(5):
        sol = solve_pose(expert, learner, [0.7, -0.4, 1.2], DistanceWeights(1.0, 1.0), "softmin",
                         SolveConfig(seed=seed))
        assert np.all(np.diff(sol.history) <= 0.0)


def test_state_dependent_weights_have_secondary_minima():
    spec = planar_chain(2)
    w = DistanceWeights(1.5, 1.0)
    _, Z = grid_scan(spec, [1.5, -1.5], spec, 120, w, "binary")
    assert len(local_minima(Z)) >= 2
    finals = [solve_pose(spec, spec, [1.5, -1.5], w, "binary", SolveConfig(seed=s)).distance
              for s in range(10)]
    assert min(finals) < 1e-6
    assert max(finals) > 0.1


def test_solve_respects_locked_joints():
    arm = anthropomorphic_arm()
    learner = lock_joints(arm, {3, 6, 7})
    sol = solve_pose(arm, learner, np.linspace(-1, 1, 7), ROTATION_ONLY, "static",
                     SolveConfig(seed=0, max_iter=50))
    assert np.all(sol.q[[2, 5, 6]] == 0.0)
    with pytest.raises(ValueError):
        solve_pose(arm, learner, np.zeros(7), init=np.zeros(3))


def test_generate_dataset():
    arm = lock_joints(anthropomorphic_arm(), {3})
    a = generate_dataset(arm, 1024, seed=5)
    assert a.shape == (1024, 7)
    assert np.all(np.abs(a) <= np.pi)
    assert np.all(a[:, 2] == 0.0)
    np.testing.assert_array_equal(a, generate_dataset(arm, 1024, seed=5))
    assert not np.array_equal(a, generate_dataset(arm, 1024, seed=6))
    assert generate_dataset(arm, 1, seed=0).shape == (1, 7)
    with pytest.raises(ValueError):
        generate_dataset(arm, 0)


def test_pose_map_output_range():
    expert, learner = planar_chain(3), planar_chain(2)
    model = PoseMap(expert, learner, seed=0)
    model.net.params = [1e3 * p + 50.0 for p in model.net.params]
    out = model(generate_dataset(expert, 200, seed=1))
    assert np.all(np.abs(out) <= np.pi)


def test_pose_map_injects_locked_zeros():
    learner = lock_joints(planar_chain(3), {2})
    model = PoseMap(planar_chain(2), learner)
    out = model(np.array([[0.2, 0.3], [1.0, -1.0]]))
    assert out.shape == (2, 3)
    assert np.all(out[:, 1] == 0.0)


def small_cfg(**kw):
    base = dict(dataset_size=128, minibatches=8, epochs=3, seed=4)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epochs_returns_initial_network():
    expert, learner = planar_chain(3), planar_chain(2)
    fresh = PoseMap(expert, learner, seed=4)
    res = train_pose_map(expert, learner, small_cfg(epochs=0))
    for a, b in zip(res.model.net.params, fresh.net.params):
        np.testing.assert_array_equal(a, b)
    assert len(res.curve) == 1


@pytest.mark.parametrize("optimizer", ["adam", "sgd"])
def test_zero_learning_rate_leaves_parameters(optimizer):
    expert, learner = planar_chain(3), planar_chain(2)
    fresh = PoseMap(expert, learner, seed=4)
    res = train_pose_map(expert, learner, small_cfg(epochs=1, learning_rate=0.0, optimizer=optimizer))
    for a, b in zip(res.model.net.params, fresh.net.params):
        np.testing.assert_array_equal(a, b)


def test_training_is_bit_reproducible():
    expert, learner = planar_chain(3), planar_chain(2)
    a = train_pose_map(expert, learner, small_cfg())
    b = train_pose_map(expert, learner, small_cfg())
    assert a.curve == b.curve
    for x, y in zip(a.model.net.params, b.model.net.params):
        np.testing.assert_array_equal(x, y)


def test_training_identical_chains_beats_baseline():
    spec = planar_chain(2)
    res = train_pose_map(spec, spec, TrainConfig(dataset_size=512, minibatches=16, epochs=30, seed=0))
    assert res.curve[-1][2] < 0.1 * res.curve[0][2]


def test_sgd_training_decreases_loss():
    expert, learner = planar_chain(3), planar_chain(2)
    res = train_pose_map(expert, learner, small_cfg(epochs=5, optimizer="sgd", learning_rate=0.05,
                                                    lr_schedule="constant"))
    assert res.curve[-1][1] < res.curve[0][1]


def test_seven_to_four_dof_decreases_early():
    arm = anthropomorphic_arm()
    res = train_pose_map(arm, lock_joints(arm, {3, 6, 7}), TrainConfig(epochs=10, seed=0))
    val = np.array([c[2] for c in res.curve])
    # decreasing up to a 5% noise band
    assert np.all(val[1:] <= 1.05 * val[:-1])
    assert val[-1] < val[0]


def test_cosine_schedule():
    cfg = TrainConfig(epochs=10, learning_rate=0.1)
    assert cfg.learning_rate_at(1) == pytest.approx(0.1)
    assert cfg.learning_rate_at(10) < 0.01
    assert TrainConfig(lr_schedule="constant").learning_rate_at(50) == TrainConfig().learning_rate


def test_evaluate_examples():
    expert, learner = planar_chain(3), planar_chain(2)
    model = PoseMap(expert, learner, seed=2)
    with pytest.raises(ValueError):
        evaluate_pose_map(model, np.zeros((0, 3)))
    # untrained network: two independent Monte-Carlo estimates agree within sampling error
    a = evaluate_pose_map(model, generate_dataset(expert, 1000, seed=10))
    b = evaluate_pose_map(model, generate_dataset(expert, 1000, seed=11))
    se = np.hypot(a.distances.std(), b.distances.std()) / np.sqrt(1000)
    assert abs(a.mean - b.mean) < 4 * se


def test_evaluate_perfect_map_identical_chains():
    spec = planar_chain(2)

    class Identity(PoseMap):
        def __call__(self, q_expert, params=None):
            return np.asarray(q_expert)

    ev = evaluate_pose_map(Identity(spec, spec), generate_dataset(spec, 50, seed=0))
    assert ev.mean < 1e-12


def test_save_load_round_trip(tmp_path):
    expert, learner = planar_chain(3), lock_joints(planar_chain(3), {3})
    model = PoseMap(expert, learner, seed=9)
    path = tmp_path / "model.json"
    model.save(path, {"note": "x"})
    loaded = PoseMap.load(path)
    q = generate_dataset(expert, 20, seed=0)
    np.testing.assert_array_equal(loaded(q), model(q))
    assert loaded.learner == learner


def test_curve_csv(tmp_path):
    path = tmp_path / "curve.csv"
    write_curve_csv(path, [(0, 0.5, 0.6), (1, 1 / 3, 0.25)])
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data[1, 1] == 1 / 3


def test_mlp_from_dict_rejects_bad_shapes():
    net = Mlp([2, 3, 1])
    d = net.to_dict()
    d["layers"][0]["W"] = [[0.0]]
    with pytest.raises(ValueError):
        Mlp.from_dict(d)
