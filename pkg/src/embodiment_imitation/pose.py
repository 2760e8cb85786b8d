"""Static pose imitation.

Two routes to a learner pose that resembles an expert pose: direct gradient
descent on the embodiment distance (:func:`solve_pose`), and a network that
maps expert angles to learner angles trained on the same distance as its
loss (:func:`train_pose_map`).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .diffgraph import tape as ad
from .diffgraph.gradients import grad_distance
from .distance import ROTATION_ONLY, Correspondence, Weights, distance_between, resolve_correspondence
from .embodiment import EmbodimentSpec, normalize, wrap_angle
from .nn import Adam, Mlp, load_weights, save_weights


@dataclass
class SolveConfig:
    step: float = 1.0
    max_iter: int = 1000
    grad_tol: float = 1e-9
    value_tol: float = 1e-15
    max_halvings: int = 30
    seed: int | None = None


@dataclass
class PoseSolution:
    q: np.ndarray
    distance: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    def __post_init__(self):
        # the distance is 2*pi periodic in every joint
        self.q = wrap_angle(self.q)


def solve_pose(expert: EmbodimentSpec, learner: EmbodimentSpec, q_expert, w: Weights = ROTATION_ONLY,
               corr: Correspondence = "static", cfg: SolveConfig | None = None, *, init=None,
               **kwargs) -> PoseSolution:
    """Local minimizer of the embodiment distance over the learner's free joints.

    Gradient descent with a fixed step that is halved until the distance
    does not increase, so accepted iterates never get worse.  Stops once the
    gradient norm or the per-iteration decrease falls below tolerance.  Starts from
    ``init`` or, without one, from angles drawn uniformly with ``cfg.seed``.
    If ``max_iter`` runs out the best iterate is returned with
    ``converged=False``.
    """
    cfg = cfg or SolveConfig()
    expert, learner = normalize(expert), normalize(learner)
    corr = resolve_correspondence(corr, expert, learner)
    free = learner.free_joints
    if init is None:
        rng = np.random.default_rng(cfg.seed)
        x = learner.expand(rng.uniform(-np.pi, np.pi, learner.dof))
    else:
        x = np.asarray(init, dtype=float).copy()
        if x.shape != (learner.n,):
            raise ValueError(f"init needs {learner.n} angles")

    def evaluate(q):
        return float(distance_between(expert, q_expert, learner, q, w, corr, **kwargs))

    res = grad_distance(expert, learner, q_expert, x, w, corr, **kwargs)
    value, g = float(res.value), res.grad
    history = [value]
    for it in range(cfg.max_iter):
        if np.linalg.norm(g[free]) <= cfg.grad_tol:
            return PoseSolution(x, value, it, True, history)
        step = cfg.step
        for _ in range(cfg.max_halvings):
            trial = x - step * g
            trial_value = evaluate(trial)
            if trial_value <= value:
                break
            step *= 0.5
        else:
            # no descent direction left at machine precision
            return PoseSolution(x, value, it, True, history)
        x = trial
        previous = value
        res = grad_distance(expert, learner, q_expert, x, w, corr, **kwargs)
        value, g = float(res.value), res.grad
        history.append(value)
        if previous - value <= cfg.value_tol * max(1.0, abs(value)):
            return PoseSolution(x, value, it + 1, True, history)
    return PoseSolution(x, value, cfg.max_iter, np.linalg.norm(g[free]) <= cfg.grad_tol, history)


def generate_dataset(spec: EmbodimentSpec, n_samples: int, seed: int | None = 0) -> np.ndarray:
    """Uniform random angles in [-pi, pi] on the free joints, zeros on locked ones."""
    if n_samples <= 0:
        raise ValueError("dataset needs at least one sample")
    rng = np.random.default_rng(seed)
    return spec.expand(rng.uniform(-np.pi, np.pi, size=(n_samples, spec.dof)))


class PoseMap:
    """Network from expert angles to the learner's free-joint angles."""

    def __init__(self, expert: EmbodimentSpec, learner: EmbodimentSpec, hidden=(32, 32, 32),
                 seed: int | None = 0, slope: float = 0.01, net: Mlp | None = None):
        self.expert = expert
        self.learner = learner
        self.net = net or Mlp([expert.dof, *hidden, learner.dof], "lrelu", "tanh_pi",
                              slope=slope, seed=seed)

    def __call__(self, q_expert, params=None):
        """Full learner angle vector(s), locked joints set to zero."""
        q_in = np.asarray(q_expert, dtype=float)[..., self.expert.free_joints]
        out = self.net.forward(q_in, params)
        if self.learner.dof == self.learner.n:
            return out
        return ad.matmul(out, _scatter_matrix(self.learner))

    def save(self, path, extra: dict | None = None) -> None:
        payload = self.net.to_dict()
        payload["expert"] = self.expert.to_dict()
        payload["learner"] = self.learner.to_dict()
        payload.update(extra or {})
        save_weights(path, payload)

    @classmethod
    def load(cls, path) -> "PoseMap":
        data = load_weights(path)
        expert = EmbodimentSpec.from_dict(data["expert"])
        learner = EmbodimentSpec.from_dict(data["learner"])
        return cls(expert, learner, net=Mlp.from_dict(data))


def _scatter_matrix(spec: EmbodimentSpec) -> np.ndarray:
    S = np.zeros((spec.dof, spec.n))
    S[np.arange(spec.dof), spec.free_joints] = 1.0
    return S


@dataclass
class TrainConfig:
    dataset_size: int = 1024
    minibatches: int = 32
    epochs: int = 120
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    lr_schedule: str = "cosine"
    seed: int = 0
    validation_fraction: float = 0.25
    max_halvings: int = 10

    def __post_init__(self):
        if not self.dataset_size >= self.minibatches >= 1:
            raise ValueError("need dataset_size >= minibatches >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown learning-rate schedule {self.lr_schedule!r}")

    def learning_rate_at(self, epoch: int) -> float:
        """Rate used during ``epoch`` (1-based)."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + np.cos(np.pi * (epoch - 1) / self.epochs))


@dataclass
class TrainResult:
    model: PoseMap
    curve: list[tuple[int, float, float]]
    train_set: np.ndarray
    validation_set: np.ndarray


def _mean_distance(model: PoseMap, q_expert, w, corr, params=None, **kwargs):
    q_hat = model(q_expert, params)
    d = distance_between(model.expert, q_expert, model.learner, q_hat, w, corr, **kwargs)
    return ad.mean(d)


def _loss_and_grads(model, batch, w, corr, params, **kwargs):
    with ad.Tape() as tape:
        watched = [tape.watch(p) for p in params]
        loss = _mean_distance(model, batch, w, corr, watched, **kwargs)
        grads = tape.gradient(loss, watched)
    value = float(ad.value_of(loss))
    if not np.isfinite(value) or not all(np.isfinite(g).all() for g in grads):
        raise FloatingPointError(f"training diverged: minibatch loss {value}")
    return value, grads


def train_pose_map(expert: EmbodimentSpec, learner: EmbodimentSpec, cfg: TrainConfig | None = None,
                   w: Weights = ROTATION_ONLY, corr: Correspondence = "static", *,
                   model: PoseMap | None = None, progress=None, **kwargs) -> TrainResult:
    """Fit a :class:`PoseMap` by minibatch descent on the mean embodiment distance.

    Each epoch shuffles the training set, splits it into ``cfg.minibatches``
    batches, and takes one optimizer step per batch.  ``curve`` holds
    ``(epoch, train_dist, val_dist)`` with epoch 0 the untrained network.
    With ``optimizer="sgd"`` every step is a fixed-size gradient step halved
    until the minibatch loss does not increase.
    """
    cfg = cfg or TrainConfig()
    expert, learner = normalize(expert), normalize(learner)
    corr = resolve_correspondence(corr, expert, learner)
    rng = np.random.default_rng(cfg.seed)
    train_set = generate_dataset(expert, cfg.dataset_size, rng)
    n_val = max(1, int(round(cfg.validation_fraction * cfg.dataset_size)))
    val_set = generate_dataset(expert, n_val, rng)
    model = model or PoseMap(expert, learner, seed=cfg.seed)
    params = model.net.params
    adam = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else None

    def score(data):
        return float(_mean_distance(model, data, w, corr, **kwargs))

    curve = [(0, score(train_set), score(val_set))]
    batches = np.array_split(np.arange(cfg.dataset_size), cfg.minibatches)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(cfg.dataset_size)
        rate = cfg.learning_rate_at(epoch)
        if adam is not None:
            adam.learning_rate = rate
        for idx in batches:
            batch = train_set[order[idx]]
            value, grads = _loss_and_grads(model, batch, w, corr, params, **kwargs)
            if adam is not None:
                adam.step(params, grads)
                continue
            step = rate
            for _ in range(cfg.max_halvings):
                trial = [p - step * g for p, g in zip(params, grads)]
                if float(_mean_distance(model, batch, w, corr, trial, **kwargs)) <= value:
                    break
                step *= 0.5
            else:
                continue
            for p, t in zip(params, trial):
                p[...] = t
        train_dist, val_dist = score(train_set), score(val_set)
        if not (np.isfinite(train_dist) and np.isfinite(val_dist)):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        curve.append((epoch, train_dist, val_dist))
        if progress is not None:
            progress(epoch, train_dist, val_dist)
    return TrainResult(model, curve, train_set, val_set)


@dataclass
class PoseEvaluation:
    mean: float
    max: float
    distances: np.ndarray


def evaluate_pose_map(model: PoseMap, test_set, w: Weights = ROTATION_ONLY,
                      corr: Correspondence = "static", **kwargs) -> PoseEvaluation:
    test_set = np.asarray(test_set, dtype=float)
    if test_set.ndim != 2 or len(test_set) == 0:
        raise ValueError("test set must be a non-empty (N, n) array")
    expert, learner = normalize(model.expert), normalize(model.learner)
    corr = resolve_correspondence(corr, expert, learner)
    q_hat = np.asarray(model(test_set))
    d = np.asarray(distance_between(expert, test_set, learner, q_hat, w, corr, **kwargs))
    return PoseEvaluation(float(d.mean()), float(d.max()), d)


def write_curve_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_dist", "val_dist"])
        for epoch, tr, va in curve:
            writer.writerow([epoch, repr(float(tr)), repr(float(va))])


def write_evaluation_csv(path, test_set, q_hat, distances) -> None:
    test_set, q_hat = np.asarray(test_set), np.asarray(q_hat)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample"] + [f"q{k + 1}" for k in range(test_set.shape[1])]
                        + [f"qhat{k + 1}" for k in range(q_hat.shape[1])] + ["distance"])
        for i, (q, qh, d) in enumerate(zip(test_set, q_hat, distances)):
            writer.writerow([i] + [repr(float(x)) for x in (*q, *qh, d)])
