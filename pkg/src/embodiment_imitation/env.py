"""Imitation environment: an expert trajectory played back open loop next to
a torque-driven learner, rewarded by the negative embodiment distance."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .distance import DEFAULT_XI, MOTION_WEIGHTS, DistanceWeights, embodiment_distance, \
    resolve_correspondence
from .dynamics import DynamicsModel, Trajectory, advance
from .embodiment import EmbodimentSpec, EmbodimentState, chain_twists, normalize


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.1
    episode_length: int = 50
    weights: DistanceWeights = MOTION_WEIGHTS
    corr: str = "static"
    substeps: int = 10
    friction: float = 0.05
    xi: float = DEFAULT_XI

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.episode_length < 1:
            raise ValueError("episode length must be at least 1")
        if self.corr not in ("static", "binary", "softmin"):
            raise ValueError(f"unknown correspondence {self.corr!r}")

    def to_dict(self) -> dict:
        return {"dt": self.dt, "episode_length": self.episode_length,
                "weights": list(self.weights.as_tuple()), "corr": self.corr,
                "substeps": self.substeps, "friction": self.friction, "xi": self.xi}

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        data = dict(data)
        data["weights"] = DistanceWeights(*data["weights"])
        return cls(**data)


@dataclass(frozen=True)
class EnvState:
    """Both agents' joint states and embodiment states at one step.

    Arrays carry a leading environment dimension in the vectorized
    environment.  Expert torques are deliberately absent.
    """

    step: np.ndarray | int
    expert_q: np.ndarray
    expert_qd: np.ndarray
    learner_q: np.ndarray
    learner_qd: np.ndarray
    expert: EmbodimentState = field(repr=False)
    learner: EmbodimentState = field(repr=False)


class VecImitationEnv:
    """``num_envs`` independent episodes stepped together.

    Each slot replays its own expert trajectory.  Slots are reset
    individually; stepping a finished slot is an error.
    """

    def __init__(self, expert: EmbodimentSpec, learner: EmbodimentSpec,
                 config: EnvConfig | None = None, num_envs: int = 1):
        if num_envs < 1:
            raise ValueError("need at least one environment")
        self.config = config or EnvConfig()
        self.expert_spec = expert
        self.learner_spec = learner
        self.num_envs = num_envs
        self.model = DynamicsModel(learner, friction=self.config.friction)
        self._expert_n = normalize(expert)
        self._learner_n = normalize(learner)
        self._corr = resolve_correspondence(self.config.corr, self._expert_n, self._learner_n)
        n, m = expert.n, learner.n
        self._traj: list[Trajectory | None] = [None] * num_envs
        self._lengths = np.zeros(num_envs, dtype=int)
        self._t = np.zeros(num_envs, dtype=int)
        self._eq = np.zeros((num_envs, n))
        self._eqd = np.zeros((num_envs, n))
        self._lq = np.zeros((num_envs, m))
        self._lqd = np.zeros((num_envs, m))

    @property
    def action_dim(self) -> int:
        return self.learner_spec.dof

    def episode_length(self, trajectory: Trajectory) -> int:
        return min(self.config.episode_length, len(trajectory) - 1)

    def _check(self, trajectory: Trajectory) -> None:
        if trajectory is None or len(trajectory) < 2:
            raise ValueError("trajectory needs at least two samples")
        if trajectory.q.shape[1] != self.expert_spec.n:
            raise ValueError(f"trajectory has {trajectory.q.shape[1]} joints, "
                             f"expert {self.expert_spec.name} has {self.expert_spec.n}")
        if not np.isclose(trajectory.dt, self.config.dt):
            raise ValueError(f"trajectory sampled at {trajectory.dt}, environment steps {self.config.dt}")

    def reset_slot(self, i: int, trajectory: Trajectory) -> None:
        self._check(trajectory)
        self._traj[i] = trajectory
        self._lengths[i] = self.episode_length(trajectory)
        self._t[i] = 0
        self._eq[i] = trajectory.q[0]
        self._eqd[i] = trajectory.qd[0]
        self._lq[i] = 0.0
        self._lqd[i] = 0.0

    def reset(self, trajectories) -> EnvState:
        if isinstance(trajectories, Trajectory):
            trajectories = [trajectories] * self.num_envs
        if len(trajectories) != self.num_envs:
            raise ValueError(f"need {self.num_envs} trajectories")
        for i, traj in enumerate(trajectories):
            self.reset_slot(i, traj)
        return self.state()

    def state(self) -> EnvState:
        return self._make_state(self._t.copy(), self._eq.copy(), self._eqd.copy(),
                                self._lq.copy(), self._lqd.copy())

    def _make_state(self, t, eq, eqd, lq, lqd) -> EnvState:
        s = chain_twists(self._expert_n, eq, eqd)
        s_hat = chain_twists(self._learner_n, lq, lqd)
        return EnvState(t, eq, eqd, lq, lqd, s, s_hat)

    def distance(self, state: EnvState) -> np.ndarray:
        """Distance between the agents in ``state``; the reward is its negative."""
        return np.asarray(embodiment_distance(state.expert, state.learner, self.config.weights,
                                              self._corr, xi=self.config.xi))

    @property
    def done(self) -> np.ndarray:
        return self._t >= self._lengths

    def step(self, actions) -> tuple[EnvState, np.ndarray, np.ndarray]:
        """Apply torques ``(num_envs, dof)`` for one ``dt``.

        Torques beyond the limits are clamped.  Returns the new state, the
        rewards and the done flags.
        """
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.num_envs, self.action_dim):
            raise ValueError(f"actions must have shape {(self.num_envs, self.action_dim)}")
        if not np.all(np.isfinite(actions)):
            raise ValueError("actions must be finite")
        if any(t is None for t in self._traj):
            raise RuntimeError("reset every slot before stepping")
        if np.any(self.done):
            raise RuntimeError("episode already finished; reset before stepping")
        tau = self.learner_spec.expand(actions)
        self._lq, self._lqd = advance(self.model, self._lq, self._lqd, tau,
                                      self.config.dt, self.config.substeps)
        self._t = self._t + 1
        for i, traj in enumerate(self._traj):
            self._eq[i] = traj.q[self._t[i]]
            self._eqd[i] = traj.qd[self._t[i]]
        state = self.state()
        rewards = -self.distance(state)
        return state, rewards, self.done.copy()


class ImitationEnv:
    """Single-episode view of :class:`VecImitationEnv` with scalar rewards."""

    def __init__(self, expert: EmbodimentSpec, learner: EmbodimentSpec,
                 config: EnvConfig | None = None):
        self._vec = VecImitationEnv(expert, learner, config, 1)

    @property
    def config(self) -> EnvConfig:
        return self._vec.config

    @property
    def action_dim(self) -> int:
        return self._vec.action_dim

    @property
    def model(self) -> DynamicsModel:
        return self._vec.model

    def reset(self, trajectory: Trajectory) -> EnvState:
        return _unbatch(self._vec.reset([trajectory]))

    def step(self, action) -> tuple[EnvState, float, bool]:
        state, rewards, dones = self._vec.step(np.asarray(action, dtype=float).reshape(1, -1))
        return _unbatch(state), float(rewards[0]), bool(dones[0])

    def distance(self, state: EnvState) -> float:
        return float(self._vec.distance(state))


def _unbatch(state: EnvState) -> EnvState:
    def pick(s: EmbodimentState) -> EmbodimentState:
        return EmbodimentState(s.rotations[0], s.positions[0], s.omega[0], s.v[0], s.normalized)

    return EnvState(int(state.step[0]), state.expert_q[0], state.expert_qd[0], state.learner_q[0],
                    state.learner_qd[0], pick(state.expert), pick(state.learner))


def run_episode(env: ImitationEnv, trajectory: Trajectory, policy) -> list[tuple[int, float, float]]:
    """Roll out ``policy(state) -> action`` for one episode.

    Returns ``(step, reward, distance)`` rows, one per step.
    """
    state = env.reset(trajectory)
    rows, done = [], False
    while not done:
        state, reward, done = env.step(policy(state))
        rows.append((state.step, reward, -reward))
    return rows


def write_episode_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "reward", "distance"])
        for step, reward, dist in rows:
            writer.writerow([int(step), repr(float(reward)), repr(float(dist))])


def read_episode_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
