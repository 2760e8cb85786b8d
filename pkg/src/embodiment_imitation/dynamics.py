"""Torque-driven rigid-body dynamics of serial chains (no gravity).

Links are solid cylinders with their centre of mass halfway along the
link.  Inverse dynamics uses the recursive Newton-Euler algorithm in link
frames; the mass matrix and velocity-product terms come out of one batched
call by probing unit accelerations.  Time stepping is classical RK4 over
fixed substeps with the torque held constant across a control step.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from .embodiment import EmbodimentSpec, JointState, body_screws, link_shifts, wrap_angle
from .se3 import skew


@dataclass(frozen=True)
class DynamicsModel:
    spec: EmbodimentSpec
    friction: float = 0.0
    radius_ratio: float = 0.05

    def __post_init__(self):
        if self.friction < 0.0:
            raise ValueError("friction must be nonnegative")
        # dynamics frames sit at the centre of mass whatever the kinematic frame offsets are
        links = tuple(replace(link, offset=link.length / 2.0) for link in self.spec.links)
        com_spec = replace(self.spec, links=links)
        L = com_spec.lengths
        m = com_spec.masses
        rho = self.radius_ratio * L
        inertia = np.stack([m * rho ** 2 / 2.0,
                            m * (3.0 * rho ** 2 + L ** 2) / 12.0,
                            m * (3.0 * rho ** 2 + L ** 2) / 12.0], axis=1)
        object.__setattr__(self, "_A", body_screws(com_spec))
        object.__setattr__(self, "_shifts", link_shifts(com_spec))
        object.__setattr__(self, "_inertia", inertia)
        object.__setattr__(self, "_offsets", com_spec.offsets)
        object.__setattr__(self, "_masses", m)
        object.__setattr__(self, "_free", self.spec.free_joints)
        object.__setattr__(self, "_locked", self.spec.locked_mask)
        object.__setattr__(self, "_limits", self.spec.torque_limits)
        n = self.spec.n
        lower = np.tril(np.ones((n, n)))
        # I_zz summed over links k >= max(i, j)
        rot = np.array([[inertia[max(i, j):, 2].sum() for j in range(n)] for i in range(n)])
        object.__setattr__(self, "_lower", lower)
        object.__setattr__(self, "_rot_inertia", rot)
        # the closed form assumes every axis is +z
        object.__setattr__(self, "planar", bool(np.allclose(self.spec.axes, [0.0, 0.0, 1.0])))

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def free(self) -> np.ndarray:
        return self._free

    @property
    def torque_limits(self) -> np.ndarray:
        return self._limits

    def pivot_inertia(self, i: int = 0) -> float:
        """Inertia of link ``i`` alone about its joint axis (z)."""
        return float(self._inertia[i, 2] + self.spec.masses[i] * self._offsets[i] ** 2)


def _cross(a, b):
    # np.cross carries heavy per-call overhead on small arrays
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _rotations(model: DynamicsModel, q):
    """Joint rotations (..., n, 3, 3) and relative frame origins (..., n, 3)."""
    A = model._A
    out_R, out_p = [], []
    for i in range(model.n):
        K = skew(A[i, :3])
        s, c = np.sin(q[..., i])[..., None, None], np.cos(q[..., i])[..., None, None]
        rot = np.eye(3) + s * K + (1.0 - c) * (K @ K)
        a = np.array([-model._offsets[i], 0.0, 0.0])
        p_rel = a - rot @ a
        p_rel[..., 0] += model._shifts[i]
        out_R.append(rot)
        out_p.append(p_rel)
    return out_R, out_p


def inverse_dynamics(model: DynamicsModel, q, qd, qdd) -> np.ndarray:
    """Joint torques for given accelerations (recursive Newton-Euler, no friction)."""
    q, qd, qdd = (np.asarray(x, dtype=float) for x in (q, qd, qdd))
    q, qd, qdd = np.broadcast_arrays(q, qd, qdd)
    A = model._A
    rots, prels = _rotations(model, q)
    batch = q.shape[:-1]
    w = np.zeros(batch + (3,))
    v = np.zeros(batch + (3,))
    dw = np.zeros(batch + (3,))
    dv = np.zeros(batch + (3,))
    twists = []
    for i in range(model.n):
        rT = np.swapaxes(rots[i], -1, -2)
        p = prels[i]
        aw, av = A[i, :3], A[i, 3:]
        w_in = np.einsum("...ij,...j->...i", rT, w)
        v_in = np.einsum("...ij,...j->...i", rT, v + _cross(w, p))
        dw_in = np.einsum("...ij,...j->...i", rT, dw)
        dv_in = np.einsum("...ij,...j->...i", rT, dv + _cross(dw, p))
        rate, acc = qd[..., i, None], qdd[..., i, None]
        w = w_in + aw * rate
        v = v_in + av * rate
        # ad_V(A) qdot term
        dw = dw_in + _cross(w, aw) * rate + aw * acc
        dv = dv_in + (_cross(v, aw) + _cross(w, av)) * rate + av * acc
        twists.append((w, v, dw, dv))
    tau = np.zeros(q.shape)
    m_next = f_next = None
    for i in range(model.n - 1, -1, -1):
        w, v, dw, dv = twists[i]
        I = model._inertia[i]
        mass = model._masses[i]
        Iw = I * w
        moment = I * dw + _cross(w, Iw)
        force = mass * (dv + _cross(w, v))
        if m_next is not None:
            rot, p = rots[i + 1], prels[i + 1]
            f_rot = np.einsum("...ij,...j->...i", rot, f_next)
            moment = moment + np.einsum("...ij,...j->...i", rot, m_next) + _cross(p, f_rot)
            force = force + f_rot
        tau[..., i] = moment @ A[i, :3] + force @ A[i, 3:]
        m_next, f_next = moment, force
    return tau


def planar_mass_and_bias(model: DynamicsModel, q, qd) -> tuple[np.ndarray, np.ndarray]:
    """Closed form of :func:`mass_matrix_and_bias` for chains turning about z.

    With absolute link angles ``th_k = q_1 + ... + q_k`` the centre of mass
    of link ``k`` has Jacobian column ``i <= k`` equal to
    ``P_k - P_i + r_k n_k``, where ``P_k = sum_{j<k} l_j n_j`` and ``n_j``
    is the in-plane normal of link ``j``.  The velocity-product torque is the
    Jacobian transpose applied to the centripetal accelerations.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    L, r, m = model.spec.lengths, model._offsets, model._masses
    th = np.cumsum(q, axis=-1)
    thd = np.cumsum(qd, axis=-1)
    c, s = np.cos(th), np.sin(th)
    u = np.stack([c, s], axis=-1)
    nrm = np.stack([-s, c], axis=-1)
    P = np.cumsum(L[:, None] * nrm, axis=-2) - L[:, None] * nrm
    # J[..., k, i, :] for link k, joint i
    J = (P[..., :, None, :] - P[..., None, :, :] + (r[:, None] * nrm)[..., :, None, :])
    J = J * model._lower[:, :, None]
    M = np.einsum("...kia,...kja,k->...ij", J, J, m) + model._rot_inertia
    centripetal = L[:, None] * thd[..., :, None] ** 2 * u
    Q = np.cumsum(centripetal, axis=-2) - centripetal
    accel = -(Q + r[:, None] * thd[..., :, None] ** 2 * u)
    h = np.einsum("...kia,...ka,k->...i", J, accel, m)
    return M, h


def mass_matrix_and_bias(model: DynamicsModel, q, qd) -> tuple[np.ndarray, np.ndarray]:
    """``M(q)`` (..., n, n) and velocity-product torques ``h(q, qd)`` (..., n)."""
    if model.planar:
        return planar_mass_and_bias(model, q, qd)
    return rnea_mass_and_bias(model, q, qd)


def rnea_mass_and_bias(model: DynamicsModel, q, qd) -> tuple[np.ndarray, np.ndarray]:
    """Mass matrix and bias from Newton-Euler probes (any joint axes)."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    n = model.n
    q_p = np.broadcast_to(q[..., None, :], q.shape[:-1] + (n + 1, n))
    qd_p = np.zeros(q_p.shape)
    qd_p[..., n, :] = qd
    qdd_p = np.zeros(q_p.shape)
    qdd_p[..., np.arange(n), np.arange(n)] = 1.0
    tau = inverse_dynamics(model, q_p, qd_p, qdd_p)
    M = np.swapaxes(tau[..., :n, :], -1, -2)
    return 0.5 * (M + np.swapaxes(M, -1, -2)), tau[..., n, :]


def mass_matrix(model: DynamicsModel, q) -> np.ndarray:
    return mass_matrix_and_bias(model, q, np.zeros_like(np.asarray(q, dtype=float)))[0]


def kinetic_energy(model: DynamicsModel, q, qd) -> np.ndarray:
    qd = np.asarray(qd, dtype=float)
    M = mass_matrix(model, q)
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, M, qd)


def forward_dynamics(model: DynamicsModel, q, qd, tau) -> np.ndarray:
    """Accelerations of the free joints; locked joints stay at rest."""
    M, h = mass_matrix_and_bias(model, q, qd)
    free = model.free
    rhs = (tau - h - model.friction * qd)[..., free]
    qdd = np.zeros(np.broadcast_shapes(np.shape(q), np.shape(tau)))
    qdd[..., free] = np.linalg.solve(M[..., free[:, None], free[None, :]], rhs[..., None])[..., 0]
    return qdd


def clamp_torque(model: DynamicsModel, tau) -> np.ndarray:
    limits = model.torque_limits
    tau = np.clip(np.asarray(tau, dtype=float), -limits, limits)
    return np.where(model._locked, 0.0, tau)


def advance(model: DynamicsModel, q, qd, tau, dt: float, substeps: int = 10):
    """Integrate ``(q, qd)`` over ``dt`` with torque ``tau`` held constant.

    Torques are clamped to the joint limits first.  Returns wrapped angles
    and velocities; raises ``FloatingPointError`` on a non-finite state.
    """
    tau = clamp_torque(model, tau)
    q = np.array(q, dtype=float)
    qd = np.array(qd, dtype=float)
    h = dt / substeps
    # a blow-up is reported below as one error instead of numpy warnings
    with np.errstate(invalid="ignore", over="ignore"):
        for _ in range(substeps):
            k1q, k1v = qd, forward_dynamics(model, q, qd, tau)
            k2q = qd + 0.5 * h * k1v
            k2v = forward_dynamics(model, q + 0.5 * h * k1q, k2q, tau)
            k3q = qd + 0.5 * h * k2v
            k3v = forward_dynamics(model, q + 0.5 * h * k2q, k3q, tau)
            k4q = qd + h * k3v
            k4v = forward_dynamics(model, q + h * k3q, k4q, tau)
            q = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
            qd = qd + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise FloatingPointError("simulation produced a non-finite state")
    return wrap_angle(q), qd


def step_dynamics(model: DynamicsModel, js: JointState, tau, dt: float = 0.1,
                  substeps: int = 10) -> JointState:
    js.validate(model.spec)
    q, qd = advance(model, js.q, js.qdot, tau, dt, substeps)
    return JointState(q, qd)


def step_torque_for_target(model: DynamicsModel, q, qd, q_target, dt: float = 0.1,
                           substeps: int = 10, iters: int = 20, tol: float = 1e-12) -> np.ndarray:
    """Constant torque that carries ``(q, qd)`` to ``q_target`` after ``dt``.

    Newton iterations on the simulated end position with a forward-difference
    Jacobian; used as an inverse-dynamics oracle for exact tracking.
    """
    free = model.free
    q, qd = np.asarray(q, dtype=float), np.asarray(qd, dtype=float)
    target = np.asarray(q_target, dtype=float)[free]
    tau = np.zeros(model.n)

    def residual(t):
        q_next, _ = advance(model, q, qd, t, dt, substeps)
        return wrap_angle(q_next[free] - target)

    for _ in range(iters):
        r = residual(tau)
        if np.max(np.abs(r)) < tol:
            break
        J = np.zeros((len(free), len(free)))
        eps = 1e-6
        for k, j in enumerate(free):
            t = tau.copy()
            t[j] += eps
            J[:, k] = (residual(t) - r) / eps
        # saturated joints have zero columns; least squares leaves them put
        tau[free] = tau[free] - np.linalg.lstsq(J, r, rcond=None)[0]
        tau = clamp_torque(model, tau)
    return tau


# expert demonstrations ----------------------------------------------------

@dataclass
class Trajectory:
    """Joint states on a uniform time grid starting at ``t = 0``."""

    q: np.ndarray
    qd: np.ndarray
    dt: float = 0.1
    name: str = "chain"

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.qd = np.atleast_2d(np.asarray(self.qd, dtype=float))
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd must have matching shapes")
        if self.dt <= 0.0:
            raise ValueError("time step must be positive")

    def __len__(self) -> int:
        return len(self.q)

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    @property
    def duration(self) -> float:
        return self.dt * (len(self) - 1)

    def state(self, k: int) -> JointState:
        return JointState(self.q[k], self.qd[k])


def write_trajectory_csv(path, traj: Trajectory) -> None:
    n = traj.q.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"q{k + 1}" for k in range(n)] + [f"qd{k + 1}" for k in range(n)])
        for t, q, qd in zip(traj.t, traj.q, traj.qd):
            writer.writerow([repr(float(x)) for x in (t, *q, *qd)])


def read_trajectory_csv(path, name: str | None = None) -> Trajectory:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if len(data) == 0:
        raise ValueError(f"{path}: trajectory is empty")
    n = (len(header) - 1) // 2
    dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.1
    return Trajectory(data[:, 1:1 + n], data[:, 1 + n:], dt, name or Path(path).stem)


@dataclass
class PidGains:
    kp: np.ndarray | float
    ki: np.ndarray | float
    kd: np.ndarray | float

    @classmethod
    def critically_damped(cls, model: DynamicsModel, natural_freq: float = 2.0,
                          ki: float = 0.0, damping: float = 1.0,
                          basis: str = "diagonal") -> "PidGains":
        """Per-joint gains ``kp = I w^2``, ``kd = 2 zeta w I``.

        ``I`` is the zero-pose inertia felt by each joint with the other
        joints held (``M_jj``, ``basis="diagonal"``) or free
        (``1 / (M^-1)_jj``, ``basis="effective"``).  Fine for fast control
        loops; at 10 Hz the light distal links make these gains unstable or
        very slow, see :meth:`tuned`.
        """
        M = mass_matrix(model, np.zeros(model.n))
        free = model.free
        if basis == "diagonal":
            inertia = np.diag(M).copy()
        elif basis == "effective":
            inertia = np.ones(model.n)
            inertia[free] = 1.0 / np.diag(np.linalg.inv(M[np.ix_(free, free)]))
        else:
            raise ValueError(f"unknown gain basis {basis!r}")
        w = natural_freq
        return cls(inertia * w ** 2, ki * inertia, 2.0 * damping * w * inertia)

    @classmethod
    def tuned(cls, model: DynamicsModel, control_dt: float = 0.1, n_poses: int = 16,
              seed: int = 0) -> "PidGains":
        """Per-joint PD gains placing the sampled closed-loop poles.

        The plant is linearized at rest in ``n_poses`` configurations (the
        zero pose plus random ones) and discretized exactly for a zero-order
        hold of ``control_dt``; the gains minimize the worst spectral radius
        over those configurations.  Deterministic for a given seed.
        """
        return _tuned_gains(model, float(control_dt), int(n_poses), int(seed))


_GAIN_BOUNDS = (1e-3, 50.0)


def _zoh(M, friction, dt):
    n = len(M)
    Minv = np.linalg.inv(M)
    aug = np.zeros((3 * n, 3 * n))
    aug[:n, n:2 * n] = np.eye(n)
    aug[n:2 * n, n:2 * n] = -friction * Minv
    aug[n:2 * n, 2 * n:] = Minv
    E = expm(aug * dt)
    return E[:2 * n, :2 * n], E[:2 * n, 2 * n:]


@lru_cache(maxsize=32)
def _tuned_gains(model: DynamicsModel, control_dt: float, n_poses: int, seed: int) -> PidGains:
    free = model.free
    k = len(free)
    rng = np.random.default_rng(seed)
    poses = model.spec.expand(np.vstack([np.zeros(k), rng.uniform(-np.pi / 2, np.pi / 2,
                                                                   (n_poses - 1, k))]))
    plants = [_zoh(mass_matrix(model, p)[np.ix_(free, free)], model.friction, control_dt)
              for p in poses]
    lo, hi = np.log(_GAIN_BOUNDS[0]), np.log(_GAIN_BOUNDS[1])

    def objective(x):
        x = np.clip(x, lo, hi)
        K = np.hstack([np.diag(np.exp(x[:k])), np.diag(np.exp(x[k:]))])
        return max(np.abs(np.linalg.eigvals(A - B @ K)).max() for A, B in plants)

    best = None
    for w in (1.0, 2.0, 3.0):
        start = PidGains.critically_damped(model, w)
        x = np.log(np.clip(np.concatenate([start.kp[free], start.kd[free]]), *_GAIN_BOUNDS))
        for _ in range(2):
            res = minimize(objective, x, method="Nelder-Mead",
                           options={"maxiter": 2000, "xatol": 1e-6, "fatol": 1e-9})
            x = res.x
        if best is None or res.fun < best[0]:
            best = (res.fun, np.clip(x, lo, hi))
    kp = np.zeros(model.n)
    kd = np.zeros(model.n)
    kp[free] = np.exp(best[1][:k])
    kd[free] = np.exp(best[1][k:])
    return PidGains(kp, np.zeros(model.n), kd)


@dataclass
class RecordResult:
    trajectory: Trajectory
    settled: bool
    final_error: float
    torques: np.ndarray = field(repr=False, default=None)


def pid_rollout(model: DynamicsModel, goals, gains: PidGains | None = None,
                duration: float = 5.0, dt: float = 0.1, substeps: int = 10,
                control_substeps: int = 1):
    """PID runs from the zero pose for a batch of goals ``(B, n)``.

    The controller samples the state and updates its torque
    ``control_substeps`` times per ``dt``.  Returns ``q, qd`` of shape
    ``(B, T+1, n)`` recorded every ``dt`` and the applied torques
    ``(B, T * control_substeps, n)``.
    """
    if substeps % control_substeps:
        raise ValueError("substeps must be a multiple of control_substeps")
    h = dt / control_substeps
    gains = gains or PidGains.tuned(model, h)
    goals = np.where(model.spec.locked_mask, 0.0, np.atleast_2d(np.asarray(goals, dtype=float)))
    steps = int(round(duration / dt))
    q = np.zeros(goals.shape)
    qd = np.zeros(goals.shape)
    integral = np.zeros(goals.shape)
    qs, qds, taus = [q], [qd], []
    for _ in range(steps):
        for _ in range(control_substeps):
            err = wrap_angle(goals - q)
            integral = integral + err * h
            tau = clamp_torque(model, gains.kp * err + gains.ki * integral - gains.kd * qd)
            try:
                q, qd = advance(model, q, qd, tau, h, substeps // control_substeps)
            except FloatingPointError as exc:
                raise FloatingPointError(f"PID expert diverged: {exc}") from exc
            taus.append(tau)
        qs.append(q)
        qds.append(qd)
    return np.stack(qs, 1), np.stack(qds, 1), np.stack(taus, 1)


def record_expert(model: DynamicsModel, goal_q, gains: PidGains | None = None,
                  duration: float = 5.0, dt: float = 0.1, substeps: int = 10,
                  settle_tol: float = 0.05, control_substeps: int = 1) -> RecordResult:
    """Drive each joint from the zero pose towards ``goal_q`` with PID control.

    By default the controller acts at the recording rate ``dt`` and holds
    its torque for the whole step, so the demonstration is reproducible by a
    learner that also acts every ``dt``.  ``settled`` reports whether every
    joint ends within ``settle_tol`` of its goal.
    """
    goal = np.asarray(goal_q, dtype=float)
    if goal.shape != (model.n,):
        raise ValueError(f"goal needs {model.n} angles")
    q, qd, tau = pid_rollout(model, goal[None], gains, duration, dt, substeps, control_substeps)
    goal = np.where(model.spec.locked_mask, 0.0, goal)
    final_error = float(np.max(np.abs(wrap_angle(goal - q[0, -1]))))
    traj = Trajectory(q[0], qd[0], dt, model.spec.name)
    return RecordResult(traj, final_error <= settle_tol, final_error, tau[0])


def sample_goals(spec: EmbodimentSpec, count: int, seed: int | None = 0,
                 limit: float = np.pi / 2) -> np.ndarray:
    """Goal poses uniform in [-limit, limit] on the free joints."""
    rng = np.random.default_rng(seed)
    return spec.expand(rng.uniform(-limit, limit, size=(count, spec.dof)))


def record_many(model: DynamicsModel, count: int, seed: int | None = 0,
                gains: PidGains | None = None, duration: float = 5.0, dt: float = 0.1,
                substeps: int = 10, control_substeps: int = 1) -> list[Trajectory]:
    """``count`` demonstrations towards goals drawn by :func:`sample_goals`."""
    goals = sample_goals(model.spec, count, seed)
    q, qd, _ = pid_rollout(model, goals, gains, duration, dt, substeps, control_substeps)
    return [Trajectory(q[k], qd[k], dt, f"{model.spec.name}_{k:03d}") for k in range(count)]
