"""Proximal policy optimization on the imitation environment.

Gaussian policy with a tanh-squashed mean scaled to the torque limits and a
state-independent log standard deviation; separate value network; clipped
surrogate objective with generalized advantage estimation.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffgraph import tape as ad
from .dynamics import Trajectory
from .embodiment import EmbodimentSpec
from .env import EnvConfig, EnvState, ImitationEnv, VecImitationEnv, run_episode
from .nn import Adam, Mlp, clip_by_global_norm, load_weights, save_weights

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PpoConfig:
    gamma: float = 0.4
    lam: float = 0.95
    clip: float = 0.2
    rollout_steps: int = 2048
    num_envs: int = 16
    epochs: int = 10
    minibatch: int = 64
    learning_rate: float = 3e-4
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 2_000_000
    hidden: tuple = (64, 64)
    init_std: float = 0.5
    vel_scale: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.clip > 0.0:
            raise ValueError("clip range must be positive")
        if self.rollout_steps % self.num_envs:
            raise ValueError("rollout_steps must be a multiple of num_envs")
        if self.init_std <= 0.0:
            raise ValueError("initial std must be positive")
        self.hidden = tuple(self.hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def observation(state: EnvState, learner: EmbodimentSpec, vel_scale: float = 0.2) -> np.ndarray:
    """Angles as (sin, cos) pairs plus scaled velocities, expert first.

    Only the learner's free joints are included.  Works on single and
    batched states.
    """
    free = learner.free_joints
    lq, lqd = state.learner_q[..., free], state.learner_qd[..., free]
    return np.concatenate([np.sin(state.expert_q), np.cos(state.expert_q),
                           vel_scale * state.expert_qd,
                           np.sin(lq), np.cos(lq), vel_scale * lqd], axis=-1)


def observation_dim(expert: EmbodimentSpec, learner: EmbodimentSpec) -> int:
    return 3 * expert.n + 3 * learner.dof


class Agent:
    """Policy and value networks for one expert/learner pair."""

    def __init__(self, expert: EmbodimentSpec, learner: EmbodimentSpec, cfg: PpoConfig | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg or PpoConfig()
        self.expert = expert
        self.learner = learner
        rng = rng if rng is not None else np.random.default_rng(self.cfg.seed)
        obs_dim = observation_dim(expert, learner)
        self.limits = learner.torque_limits[learner.free_joints]
        self.policy = Mlp([obs_dim, *self.cfg.hidden, learner.dof], "tanh", "tanh", rng=rng,
                          output_gain=0.01)
        self.value = Mlp([obs_dim, *self.cfg.hidden, 1], "tanh", "linear", rng=rng)
        self.log_std = np.full(learner.dof, np.log(self.cfg.init_std))

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.policy.params, self.log_std, *self.value.params]

    def _split(self, params):
        k = len(self.policy.params)
        return params[:k], params[k], params[k + 1:]

    def observe(self, state: EnvState) -> np.ndarray:
        return observation(state, self.learner, self.cfg.vel_scale)

    def mean(self, obs, policy_params=None):
        return self.limits * self.policy.forward(obs, policy_params)

    def values(self, obs, value_params=None):
        v = self.value.forward(obs, value_params)
        return v[..., 0]

    def act(self, state: EnvState, rng: np.random.Generator | None = None, deterministic: bool = False):
        obs = self.observe(state)
        mu = self.mean(obs)
        if deterministic:
            return mu
        return mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)

    def log_prob(self, obs, actions, params=None):
        pol, log_std, _ = self._split(self.params if params is None else params)
        mu = self.mean(obs, pol)
        z = (actions - mu) * ad.exp(-log_std)
        return -0.5 * ad.sum(z * z, axis=-1) - ad.sum(log_std) - 0.5 * self.learner.dof * _LOG_2PI

    def entropy(self, log_std=None):
        log_std = self.log_std if log_std is None else log_std
        return ad.sum(log_std) + 0.5 * self.learner.dof * (1.0 + _LOG_2PI)

    # persistence, same weight-file layout as the pose map
    def save(self, path, env_config: EnvConfig | None = None, extra: dict | None = None) -> None:
        payload = self.policy.to_dict()
        payload.update({
            "value": self.value.to_dict(), "log_std": self.log_std.tolist(),
            "expert": self.expert.to_dict(), "learner": self.learner.to_dict(),
            "ppo": self.cfg.to_dict(),
        })
        if env_config is not None:
            payload["env"] = env_config.to_dict()
        payload.update(extra or {})
        save_weights(path, payload)

    @classmethod
    def load(cls, path) -> tuple["Agent", EnvConfig | None]:
        data = load_weights(path)
        cfg = PpoConfig(**data["ppo"])
        agent = cls(EmbodimentSpec.from_dict(data["expert"]), EmbodimentSpec.from_dict(data["learner"]), cfg)
        agent.policy = Mlp.from_dict(data)
        agent.value = Mlp.from_dict(data["value"])
        agent.log_std = np.array(data["log_std"], dtype=float)
        env_cfg = EnvConfig.from_dict(data["env"]) if "env" in data else None
        return agent, env_cfg


@dataclass
class RolloutBatch:
    """Arrays shaped ``(T, num_envs, ...)`` plus the bootstrap values."""

    obs: np.ndarray
    actions: np.ndarray
    logprobs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    states: list = field(default_factory=list, repr=False)
    episode_returns: list = field(default_factory=list)
    episode_distances: list = field(default_factory=list)
    trajectory_ids: list = field(default_factory=list)


class RolloutCollector:
    """Runs the vectorized environment across updates, resetting finished
    slots with a trajectory drawn uniformly from the training set."""

    def __init__(self, env: VecImitationEnv, trajectories: list[Trajectory], rng: np.random.Generator,
                 keep_states: bool = False):
        if not trajectories:
            raise ValueError("training set holds no trajectories")
        self.env = env
        self.trajectories = trajectories
        self.rng = rng
        self.keep_states = keep_states
        self._ret = np.zeros(env.num_envs)
        self._dist = np.zeros(env.num_envs)
        self._ids = np.zeros(env.num_envs, dtype=int)
        for i in range(env.num_envs):
            self._reset(i)
        self.state = env.state()

    def _reset(self, i: int) -> None:
        k = int(self.rng.integers(len(self.trajectories)))
        self._ids[i] = k
        self.env.reset_slot(i, self.trajectories[k])
        self._ret[i] = 0.0
        self._dist[i] = 0.0

    def collect(self, agent: Agent, steps: int) -> RolloutBatch:
        B = self.env.num_envs
        if steps % B:
            raise ValueError("steps must be a multiple of num_envs")
        T = steps // B
        obs, acts, logps, rews, vals, dones, states = [], [], [], [], [], [], []
        ep_ret, ep_dist, ep_ids = [], [], []
        for _ in range(T):
            o = agent.observe(self.state)
            a = agent.act(self.state, self.rng)
            obs.append(o)
            acts.append(a)
            logps.append(agent.log_prob(o, a))
            vals.append(agent.values(o))
            new_state, r, d = self.env.step(a)
            if self.keep_states:
                states.append(new_state)
            rews.append(r)
            dones.append(d)
            self._ret += r
            self._dist += -r
            for i in np.flatnonzero(d):
                ep_ret.append(float(self._ret[i]))
                ep_dist.append(float(self._dist[i] / self.env._lengths[i]))
                ep_ids.append(int(self._ids[i]))
                self._reset(i)
            self.state = self.env.state()
        last = agent.values(agent.observe(self.state))
        return RolloutBatch(np.array(obs), np.array(acts), np.array(logps), np.array(rews),
                            np.array(vals), np.array(dones), last, states, ep_ret, ep_dist, ep_ids)


def collect_rollouts(env: VecImitationEnv, agent: Agent, trajectories: list[Trajectory], steps: int,
                     rng: np.random.Generator, keep_states: bool = False) -> RolloutBatch:
    """One-off batch from freshly reset environments."""
    return RolloutCollector(env, trajectories, rng, keep_states).collect(agent, steps)


def compute_gae(rewards, values, dones, last_values, gamma: float = 0.4, lam: float = 0.95,
                normalize: bool = True):
    """Generalized advantage estimates over ``(T, B)`` arrays.

    ``dones[t]`` marks that the transition at ``t`` ended its episode, so
    nothing is bootstrapped across it.  Returns ``(advantages, returns)``
    with ``returns = raw advantages + values``; the advantages are
    normalized to zero mean and unit variance when ``normalize`` is set.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_values = np.asarray(last_values, dtype=float)
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_values = values[t]
    returns = adv + values
    if normalize:
        std = adv.std()
        adv = (adv - adv.mean()) / (std if std > 0.0 else 1.0)
    return adv, returns


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_frac: float
    surrogate_first: float


def ppo_loss(agent: Agent, params, obs, actions, old_logp, adv, returns, cfg: PpoConfig):
    """Scalar loss (to minimize) and the clipped surrogate pieces."""
    pol, log_std, val = agent._split(params)
    logp = agent.log_prob(obs, actions, params)
    ratio = ad.exp(logp - old_logp)
    surrogate = ad.minimum(ratio * adv, ad.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv)
    policy_obj = ad.mean(surrogate)
    v = agent.values(obs, val)
    value_loss = ad.mean(ad.square(v - returns))
    entropy = agent.entropy(log_std)
    loss = -policy_obj + cfg.vf_coef * value_loss - cfg.ent_coef * entropy
    return loss, policy_obj, value_loss, entropy, logp, ratio


def ppo_update(agent: Agent, batch: RolloutBatch, cfg: PpoConfig, optimizer: Adam,
               rng: np.random.Generator) -> UpdateStats:
    """Several epochs of minibatch steps on the clipped surrogate."""
    adv, returns = compute_gae(batch.rewards, batch.values, batch.dones, batch.last_values,
                               cfg.gamma, cfg.lam, normalize=True)
    obs = batch.obs.reshape(-1, batch.obs.shape[-1])
    actions = batch.actions.reshape(-1, batch.actions.shape[-1])
    old_logp = batch.logprobs.reshape(-1)
    adv, returns = adv.reshape(-1), returns.reshape(-1)
    N = len(obs)
    params = agent.params
    optimizer.learning_rate = cfg.learning_rate
    p_losses, v_losses, ents, kls, clips = [], [], [], [], []
    surrogate_first = None
    for _ in range(cfg.epochs):
        order = rng.permutation(N)
        for start in range(0, N, cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            tape = ad.Tape()
            watched = [tape.watch(p) for p in params]
            loss, pobj, vloss, ent, logp, ratio = ppo_loss(
                agent, watched, obs[idx], actions[idx], old_logp[idx], adv[idx], returns[idx], cfg)
            grads = tape.gradient(loss, watched)
            lv = float(ad.value_of(loss))
            if not np.isfinite(lv) or not all(np.isfinite(g).all() for g in grads):
                raise FloatingPointError(
                    f"PPO update diverged: loss={lv}, value_loss={float(ad.value_of(vloss))}, "
                    f"log_std={agent.log_std.tolist()}")
            grads, _ = clip_by_global_norm(grads, cfg.max_grad_norm)
            optimizer.step(params, grads)
            r = np.asarray(ad.value_of(ratio))
            lp = np.asarray(ad.value_of(logp))
            if surrogate_first is None:
                surrogate_first = float(ad.value_of(pobj))
            p_losses.append(-float(ad.value_of(pobj)))
            v_losses.append(float(ad.value_of(vloss)))
            ents.append(float(ad.value_of(ent)))
            kls.append(float(np.mean((r - 1.0) - (lp - old_logp[idx]))))
            clips.append(float(np.mean(np.abs(r - 1.0) > cfg.clip)))
    return UpdateStats(float(np.mean(p_losses)), float(np.mean(v_losses)), float(np.mean(ents)),
                       float(np.mean(kls)), float(np.mean(clips)), surrogate_first)


@dataclass
class RlTrainResult:
    agent: Agent
    curve: list = field(default_factory=list)


def train(expert: EmbodimentSpec, learner: EmbodimentSpec, trajectories: list[Trajectory],
          cfg: PpoConfig | None = None, env_config: EnvConfig | None = None, *,
          progress=None, checkpoint=None) -> RlTrainResult:
    """Train an agent for ``cfg.total_steps`` environment steps.

    ``curve`` rows are ``(update, steps, mean_return, mean_distance,
    clip_frac)`` where the episode statistics average the episodes that
    finished during that update's rollout (NaN if none did).  With
    ``checkpoint`` set the agent is saved there after every update.
    """
    cfg = cfg or PpoConfig()
    env_config = env_config or EnvConfig()
    rng = np.random.default_rng(cfg.seed)
    agent = Agent(expert, learner, cfg, rng)
    env = VecImitationEnv(expert, learner, env_config, cfg.num_envs)
    collector = RolloutCollector(env, list(trajectories), rng)
    optimizer = Adam(cfg.learning_rate)
    curve = []
    steps = 0
    update = 0
    while steps < cfg.total_steps:
        batch = collector.collect(agent, cfg.rollout_steps)
        steps += cfg.rollout_steps
        update += 1
        stats = ppo_update(agent, batch, cfg, optimizer, rng)
        mean_ret = float(np.mean(batch.episode_returns)) if batch.episode_returns else float("nan")
        mean_dist = float(np.mean(batch.episode_distances)) if batch.episode_distances else float("nan")
        row = (update, steps, mean_ret, mean_dist, stats.clip_frac)
        curve.append(row)
        if checkpoint is not None:
            agent.save(checkpoint, env_config)
        if progress is not None:
            progress(row, stats)
    return RlTrainResult(agent, curve)


def evaluate(policy, expert: EmbodimentSpec, learner: EmbodimentSpec, trajectory: Trajectory,
             env_config: EnvConfig | None = None) -> list[tuple[int, float, float]]:
    """Per-step ``(step, reward, distance)`` series of one episode.

    ``policy`` is an :class:`Agent` (acting with its mean action) or any
    callable mapping an :class:`EnvState` to a torque vector.
    """
    env = ImitationEnv(expert, learner, env_config)
    act = (lambda s: policy.act(s, deterministic=True)) if isinstance(policy, Agent) else policy
    return run_episode(env, trajectory, act)


def zero_policy(learner: EmbodimentSpec):
    return lambda state: np.zeros(learner.dof)


def mean_distance(rows) -> float:
    return float(np.mean([d for _, _, d in rows]))


def write_curve_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update", "steps", "mean_return", "mean_distance", "clip_frac"])
        for update, steps, ret, dist, clip in curve:
            writer.writerow([int(update), int(steps), repr(float(ret)), repr(float(dist)), repr(float(clip))])
