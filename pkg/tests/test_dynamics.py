import numpy as np
import pytest

from embodiment_imitation.dynamics import (DynamicsModel, PidGains, Trajectory, advance,
                                           clamp_torque, forward_dynamics, inverse_dynamics,
                                           kinetic_energy, mass_matrix, mass_matrix_and_bias,
                                           pid_rollout, planar_mass_and_bias, read_trajectory_csv,
                                           record_expert, record_many, rnea_mass_and_bias,
                                           sample_goals, step_dynamics, step_torque_for_target,
                                           write_trajectory_csv)
from embodiment_imitation.embodiment import (JointState, anthropomorphic_arm, lock_joints,
                                             planar_chain)


@pytest.fixture(scope="module")
def arm_model():
    return DynamicsModel(anthropomorphic_arm())


def test_model_validation():
    with pytest.raises(ValueError):
        DynamicsModel(planar_chain(2), friction=-1.0)
    assert DynamicsModel(planar_chain(3)).planar
    assert not DynamicsModel(anthropomorphic_arm()).planar


def test_rnea_consistent_with_mass_matrix(rng, arm_model):
    q, qd, qdd = (rng.normal(size=(10, 7)) for _ in range(3))
    M, h = rnea_mass_and_bias(arm_model, q, qd)
    tau = inverse_dynamics(arm_model, q, qd, qdd)
    np.testing.assert_allclose(tau, np.einsum("...ij,...j->...i", M, qdd) + h, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(M) > 0)


def test_planar_closed_form_matches_rnea(rng):
    model = DynamicsModel(planar_chain(3, lengths=[0.5, 0.3, 0.2]))
    q, qd = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    M1, h1 = planar_mass_and_bias(model, q, qd)
    M2, h2 = rnea_mass_and_bias(model, q, qd)
    np.testing.assert_allclose(M1, M2, atol=1e-13)
    np.testing.assert_allclose(h1, h2, atol=1e-13)


def test_power_balance(rng, arm_model):
    """dE/dt equals the mechanical power qd . tau when there is no friction."""
    q, qd, tau = rng.normal(size=7), rng.normal(size=7), rng.normal(size=7)
    qdd = forward_dynamics(arm_model, q, qd, tau)
    h = 1e-6
    dE = (kinetic_energy(arm_model, q + h * qd, qd + h * qdd)
          - kinetic_energy(arm_model, q - h * qd, qd - h * qdd)) / (2 * h)
    assert dE == pytest.approx(qd @ tau, rel=1e-6)


def test_equilibrium_without_gravity():
    model = DynamicsModel(planar_chain(2))
    js = JointState([0.4, -0.2])
    out = step_dynamics(model, js, np.zeros(2))
    np.testing.assert_array_equal(out.q, js.q)
    np.testing.assert_array_equal(out.qdot, 0.0)


@pytest.mark.parametrize("spec", [planar_chain(2), planar_chain(3), anthropomorphic_arm()],
                         ids=["planar2", "planar3", "arm7"])
def test_energy_conserved(spec):
    model = DynamicsModel(spec)
    q = np.linspace(0.3, -0.5, spec.n)
    qd = np.linspace(1.0, -1.5, spec.n)
    E0 = kinetic_energy(model, q, qd)
    for _ in range(50):
        q, qd = advance(model, q, qd, np.zeros(spec.n), 0.1, 10)
    assert abs(kinetic_energy(model, q, qd) - E0) / E0 < 1e-3


def test_constant_torque_single_link():
    model = DynamicsModel(planar_chain(1))
    I = model.pivot_inertia()
    tau = 0.3
    q, qd = np.zeros(1), np.zeros(1)
    for k in range(1, 21):
        q, qd = advance(model, q, qd, [tau], 0.1, 10)
        t = 0.1 * k
        assert abs(q[0] - 0.5 * tau / I * t ** 2) < 1e-4
        assert abs(qd[0] - tau / I * t) < 1e-4


def test_friction_dissipates():
    model = DynamicsModel(planar_chain(2), friction=0.05)
    q, qd = np.zeros(2), np.array([1.0, -1.0])
    E0 = kinetic_energy(model, q, qd)
    q, qd = advance(model, q, qd, np.zeros(2), 1.0, 100)
    assert kinetic_energy(model, q, qd) < E0


def test_clamp_and_locked_joints():
    spec = lock_joints(planar_chain(3, torque_limit=2.0), {2})
    model = DynamicsModel(spec)
    np.testing.assert_array_equal(clamp_torque(model, [5.0, 1.0, -9.0]), [2.0, 0.0, -2.0])
    q, qd = advance(model, np.zeros(3), np.zeros(3), [1.0, 1.0, 1.0], 0.5, 10)
    assert q[1] == 0.0 and qd[1] == 0.0
    assert q[0] != 0.0 and q[2] != 0.0


def test_nonfinite_state_raises():
    model = DynamicsModel(planar_chain(2))
    with pytest.raises(FloatingPointError):
        advance(model, np.zeros(2), np.array([np.inf, 0.0]), np.zeros(2), 0.1)


def test_torque_oracle_hits_target(rng):
    model = DynamicsModel(planar_chain(2), friction=0.05)
    q, qd = rng.normal(size=2) * 0.3, rng.normal(size=2) * 0.3
    target = q + 0.02
    tau = step_torque_for_target(model, q, qd, target)
    q_next, _ = advance(model, q, qd, tau, 0.1, 10)
    np.testing.assert_allclose(q_next, target, atol=1e-10)


def test_trajectory_csv_round_trip(tmp_path, rng):
    traj = Trajectory(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), 0.1, "x")
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj)
    back = read_trajectory_csv(path)
    np.testing.assert_array_equal(back.q, traj.q)
    np.testing.assert_array_equal(back.qd, traj.qd)
    assert back.dt == pytest.approx(0.1, abs=1e-12)
    assert path.read_text().splitlines()[0] == "t,q1,q2,qd1,qd2"
    empty = tmp_path / "empty.csv"
    empty.write_text("t,q1,qd1\n")
    with pytest.raises(ValueError):
        read_trajectory_csv(empty)


def test_record_zero_goal_stays():
    res = record_expert(DynamicsModel(planar_chain(2)), np.zeros(2))
    assert not np.any(res.trajectory.q)
    assert res.settled


def test_critically_damped_single_joint():
    model = DynamicsModel(planar_chain(1))
    gains = PidGains.critically_damped(model, natural_freq=2.0)
    res = record_expert(model, [np.pi / 4], gains)
    assert abs(res.trajectory.q[-1, 0] - np.pi / 4) < 0.05
    assert res.settled


def test_tuned_gains_settle_two_link():
    model = DynamicsModel(planar_chain(2))
    gains = PidGains.tuned(model)
    assert PidGains.tuned(model) is gains
    res = record_expert(model, [np.pi / 4, 0.0], gains)
    assert res.settled
    goals = sample_goals(model.spec, 20, seed=1)
    q, _, _ = pid_rollout(model, goals, gains)
    assert np.max(np.abs(q[:, -1] - goals)) < 0.05


def test_record_many_reproducible():
    model = DynamicsModel(planar_chain(2))
    a = record_many(model, 124, seed=7)
    b = record_many(model, 124, seed=7)
    assert len(a) == 124
    assert all(np.array_equal(x.q, y.q) for x, y in zip(a, b))
    finals = {tuple(np.round(t.q[-1], 6)) for t in a}
    assert len(finals) == 124
    assert a[0].name == "planar2_000"
    assert len(a[0]) == 51


def test_pid_rollout_torque_hold_and_locks():
    spec = lock_joints(planar_chain(3), {3})
    model = DynamicsModel(spec)
    q, qd, tau = pid_rollout(model, [[0.5, -0.5, 1.0]], duration=1.0, control_substeps=2)
    assert q.shape == (1, 11, 3)
    assert tau.shape == (1, 20, 3)
    assert np.all(q[..., 2] == 0.0) and np.all(tau[..., 2] == 0.0)
    with pytest.raises(ValueError):
        pid_rollout(model, [[0, 0, 0]], control_substeps=3)


def test_mass_matrix_batched(rng):
    model = DynamicsModel(planar_chain(3))
    q = rng.normal(size=(4, 3))
    M = mass_matrix(model, q)
    for k in range(4):
        np.testing.assert_allclose(M[k], mass_matrix(model, q[k]), atol=1e-15)
    M2, _ = mass_matrix_and_bias(model, q, np.zeros((4, 3)))
    np.testing.assert_array_equal(M, M2)
