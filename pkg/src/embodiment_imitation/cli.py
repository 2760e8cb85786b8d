"""Command-line entry point.

Every command writes its outputs into ``--out-dir`` together with one JSON
run manifest.  ``embodiment-imitation --manifest run.json`` without a
command replays the recorded invocation.

Embodiments are given as spec JSON files or shorthands: ``planar:N``,
``planar:N:lock=2,3``, ``planar:N:lengths=0.5,0.3,0.2`` and ``arm7``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .distance import DEFAULT_XI, DISTANCE_DEPENDENT, DistanceWeights, distance_table, \
    grid_scan, local_minima, resolve_correspondence, write_distance_csv, write_scan_csv
from .dynamics import DynamicsModel, Trajectory, read_trajectory_csv, record_many, \
    sample_goals, write_trajectory_csv
from .embodiment import EmbodimentSpec, anthropomorphic_arm, chain_twists, load_spec, \
    lock_joints, normalize, planar_chain, wrap_angle
from .env import EnvConfig, write_episode_csv
from .plotting import write_line_svg
from .pose import PoseMap, SolveConfig, TrainConfig, evaluate_pose_map, generate_dataset, \
    solve_pose, train_pose_map, write_curve_csv, write_evaluation_csv
from .ppo import Agent, PpoConfig, evaluate, mean_distance, train, zero_policy
from .ppo import write_curve_csv as write_rl_curve_csv

EXIT_USAGE = 2
EXIT_DIVERGED = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    version: str = __version__
    started: str = ""
    wall_clock_s: float = 0.0

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Tracks inputs, outputs and seeds of one command."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self._seq = np.random.SeedSequence(args.seed)

    def input(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise CliError(f"no such file or directory: {path}")
        if path.is_file():
            self.inputs[str(path)] = _sha256(path)
        return path

    def output(self, name: str) -> Path:
        path = self.out / name
        self.outputs.append(path)
        return path

    def seed(self) -> int:
        """Next child seed of the run's single seed sequence."""
        child = self._seq.spawn(1)[0]
        return int(child.generate_state(1, dtype=np.uint32)[0])


# argument parsing ---------------------------------------------------------

def parse_spec(text: str, run: Run | None = None) -> EmbodimentSpec:
    if text == "arm7":
        return anthropomorphic_arm()
    if text.startswith("planar:"):
        parts = text.split(":")
        try:
            n = int(parts[1])
            opts = dict(p.split("=", 1) for p in parts[2:])
            lengths = [float(x) for x in opts["lengths"].split(",")] if "lengths" in opts else None
            spec = planar_chain(n, lengths=lengths)
            if "lock" in opts:
                spec = lock_joints(spec, [int(x) for x in opts["lock"].split(",")])
        except (ValueError, IndexError, KeyError) as exc:
            raise CliError(f"bad embodiment shorthand {text!r}: {exc}") from exc
        return spec
    path = run.input(text) if run is not None else Path(text)
    try:
        return load_spec(path)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"invalid spec file {path}: {exc}") from exc


def parse_vector(text: str, n: int | None = None, what: str = "angles") -> np.ndarray:
    try:
        vec = np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise CliError(f"cannot parse {what} {text!r}") from exc
    if n is not None and len(vec) != n:
        raise CliError(f"expected {n} {what}, got {len(vec)}")
    return vec


def parse_weights(text: str):
    if text in (DISTANCE_DEPENDENT, "dd"):
        return DISTANCE_DEPENDENT
    try:
        return DistanceWeights.parse(text)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _add_distance_flags(p, weights="0,1,0,0", corr="static"):
    p.add_argument("--weights", default=weights,
                   help="alpha_tr,alpha_rot[,alpha_v,alpha_omega] or 'distance_dependent'")
    p.add_argument("--corr", default=corr, choices=["static", "binary", "softmin"])
    p.add_argument("--xi", type=float, default=DEFAULT_XI, help="softmin exponent (negative)")


def _add_global_flags(p, default) -> None:
    p.add_argument("--seed", type=int, default=default, help="run seed (default 0)")
    p.add_argument("--out-dir", default=default, help="output directory (default .)")
    p.add_argument("--manifest", default=default,
                   help="where to write the run manifest; without a command, replays one")


def _subparser_factory(common):
    def factory(**kwargs):
        kwargs.setdefault("parents", []).append(common)
        return argparse.ArgumentParser(**kwargs)
    return factory


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embodiment-imitation",
                                     description="Embodiment-distance imitation toolkit")
    _add_global_flags(parser, argparse.SUPPRESS)
    parser.set_defaults(seed=0, out_dir=".", manifest=None)
    parser.add_argument("--version", action="version", version=__version__)
    # global flags are accepted before or after the command name
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=_subparser_factory(common))

    p = sub.add_parser("pose-imitate", help="solve a static learner pose by gradient descent")
    p.add_argument("--expert", required=True)
    p.add_argument("--learner", required=True)
    p.add_argument("--q", required=True, help="expert angles, comma separated")
    p.add_argument("--init", default=None, help="learner start angles (default: random)")
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--scan", type=int, default=None, metavar="RES",
                   help="also write a RES x RES distance grid (2-DOF learners)")
    _add_distance_flags(p)

    p = sub.add_parser("distance", help="distance between two joint states")
    p.add_argument("--expert", required=True)
    p.add_argument("--learner", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--q-hat", required=True)
    p.add_argument("--qd", default=None)
    p.add_argument("--qd-hat", default=None)
    _add_distance_flags(p)

    p = sub.add_parser("scan", help="distance grid over a 2-DOF learner")
    p.add_argument("--expert", required=True)
    p.add_argument("--learner", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--res", type=int, default=360)
    _add_distance_flags(p)

    p = sub.add_parser("train-map", help="train a network from expert to learner poses")
    p.add_argument("--expert", required=True)
    p.add_argument("--learner", required=True)
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--minibatches", type=int, default=32)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=TrainConfig.optimizer)
    p.add_argument("--schedule", choices=["constant", "cosine"], default=TrainConfig.lr_schedule)
    p.add_argument("--test-samples", type=int, default=1024)
    _add_distance_flags(p)

    p = sub.add_parser("eval-map", help="evaluate a trained pose map")
    p.add_argument("--model", required=True)
    p.add_argument("--test", default=None,
                   help="CSV of expert angles, 'same' for the training set, or omit for a fresh set")
    p.add_argument("--test-samples", type=int, default=1024)
    _add_distance_flags(p)

    p = sub.add_parser("record-expert", help="record PID expert trajectories")
    p.add_argument("--spec", default="planar:2")
    p.add_argument("--n", type=int, default=124)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--substeps", type=int, default=10)
    p.add_argument("--control-substeps", type=int, default=1)
    p.add_argument("--friction", type=float, default=EnvConfig.friction)

    p = sub.add_parser("train-rl", help="train a PPO imitation policy")
    p.add_argument("--expert", required=True)
    p.add_argument("--learner", required=True)
    p.add_argument("--trajs", required=True, help="directory of trajectory CSVs or one CSV")
    p.add_argument("--gamma", type=float, default=PpoConfig.gamma)
    p.add_argument("--steps", type=int, default=PpoConfig.total_steps)
    p.add_argument("--rollout", type=int, default=PpoConfig.rollout_steps)
    p.add_argument("--num-envs", type=int, default=PpoConfig.num_envs)
    p.add_argument("--lr", type=float, default=PpoConfig.learning_rate)
    p.add_argument("--epochs", type=int, default=PpoConfig.epochs)
    p.add_argument("--minibatch", type=int, default=PpoConfig.minibatch)
    p.add_argument("--friction", type=float, default=EnvConfig.friction)
    _add_distance_flags(p, weights="0,1,0.001,0.01")

    p = sub.add_parser("eval-rl", help="roll out a policy on one trajectory")
    p.add_argument("--policy", required=True, help="checkpoint, or 'zero' for the zero-torque policy")
    p.add_argument("--traj", required=True)
    p.add_argument("--expert", default=None, help="needed with --policy zero")
    p.add_argument("--learner", default=None, help="needed with --policy zero")
    return parser


# commands ------------------------------------------------------------------

def _dump(run: Run, name: str, payload: dict) -> None:
    run.output(name).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def cmd_pose_imitate(args, run: Run) -> dict:
    expert, learner = parse_spec(args.expert, run), parse_spec(args.learner, run)
    q = parse_vector(args.q, expert.n)
    w = parse_weights(args.weights)
    init = parse_vector(args.init, learner.n) if args.init else None
    cfg = SolveConfig(step=args.step, max_iter=args.max_iter, seed=run.seed())
    sol = solve_pose(expert, learner, q, w, args.corr, cfg, init=init, xi=args.xi)
    result = {"q": q.tolist(), "q_hat": sol.q.tolist(), "distance": sol.distance,
              "iterations": sol.iterations, "converged": sol.converged,
              "weights": w if isinstance(w, str) else list(w.as_tuple()), "corr": args.corr}
    if args.scan:
        angles, Z = grid_scan(expert, q, learner, args.scan, w, args.corr, xi=args.xi)
        write_scan_csv(run.output("scan.csv"), angles, Z)
        minima = local_minima(Z)
        result["scan"] = {"resolution": args.scan, "local_minima": len(minima),
                          "minima_angles": [[float(angles[a]), float(angles[b])] for a, b in minima]}
    _dump(run, "pose.json", result)
    return result


def cmd_distance(args, run: Run) -> dict:
    expert, learner = parse_spec(args.expert, run), parse_spec(args.learner, run)
    q, q_hat = parse_vector(args.q, expert.n), parse_vector(args.q_hat, learner.n)
    qd = parse_vector(args.qd, expert.n, "velocities") if args.qd else np.zeros(expert.n)
    qd_hat = parse_vector(args.qd_hat, learner.n, "velocities") if args.qd_hat else np.zeros(learner.n)
    w = parse_weights(args.weights)
    if isinstance(w, str):
        raise CliError("the distance command needs explicit weights")
    e_n, l_n = normalize(expert), normalize(learner)
    try:
        s, s_hat = chain_twists(e_n, q, qd), chain_twists(l_n, q_hat, qd_hat)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    corr = resolve_correspondence(args.corr, e_n, l_n)
    rows = distance_table(s, s_hat, w, corr, xi=args.xi)
    write_distance_csv(run.output("distance.csv"), rows)
    total = float(np.mean([r["weighted"] for r in rows]))
    result = {"distance": total, "weights": list(w.as_tuple()), "corr": args.corr}
    _dump(run, "distance.json", result)
    return result


def cmd_scan(args, run: Run) -> dict:
    expert, learner = parse_spec(args.expert, run), parse_spec(args.learner, run)
    q = parse_vector(args.q, expert.n)
    w = parse_weights(args.weights)
    try:
        angles, Z = grid_scan(expert, q, learner, args.res, w, args.corr, xi=args.xi)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    write_scan_csv(run.output("scan.csv"), angles, Z)
    minima = local_minima(Z)
    result = {"resolution": args.res, "local_minima": len(minima),
              "minima_angles": [[float(angles[a]), float(angles[b])] for a, b in minima]}
    _dump(run, "scan.json", result)
    return result


def _write_angles_csv(path, data) -> None:
    header = ",".join(f"q{k + 1}" for k in range(data.shape[1]))
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def _read_angles_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def cmd_train_map(args, run: Run) -> dict:
    expert, learner = parse_spec(args.expert, run), parse_spec(args.learner, run)
    w = parse_weights(args.weights)
    seed = run.seed()
    cfg = TrainConfig(dataset_size=args.samples, minibatches=args.minibatches, epochs=args.epochs,
                      learning_rate=args.lr, optimizer=args.optimizer, lr_schedule=args.schedule,
                      seed=seed)
    try:
        res = train_pose_map(expert, learner, cfg, w, args.corr, xi=args.xi)
    except FloatingPointError as exc:
        raise CliError(str(exc), EXIT_DIVERGED) from exc
    test_set = generate_dataset(expert, args.test_samples, run.seed())
    ev = evaluate_pose_map(res.model, test_set, w, args.corr, xi=args.xi)
    _write_angles_csv(run.output("train_set.csv"), res.train_set)
    _write_angles_csv(run.output("test_set.csv"), test_set)
    res.model.save(run.output("model.json"), {"train_set_file": "train_set.csv", "train_seed": seed})
    write_curve_csv(run.output("curve.csv"), res.curve)
    curve = np.array(res.curve)
    write_line_svg(run.output("curve.svg"), {"train": (curve[:, 0], curve[:, 1]),
                                             "validation": (curve[:, 0], curve[:, 2])},
                   title="pose map training", xlabel="epoch", ylabel="mean distance")
    write_evaluation_csv(run.output("eval.csv"), test_set, np.asarray(res.model(test_set)), ev.distances)
    baseline = res.curve[0][2]
    result = {"epochs": args.epochs, "untrained_val": baseline, "final_train": res.curve[-1][1],
              "final_val": res.curve[-1][2], "test_mean": ev.mean, "test_max": ev.max}
    _dump(run, "train_map.json", result)
    return result


def cmd_eval_map(args, run: Run) -> dict:
    model_path = run.input(args.model)
    try:
        model = PoseMap.load(model_path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"invalid model file {model_path}: {exc}") from exc
    w = parse_weights(args.weights)
    if args.test == "same":
        stored = json.loads(model_path.read_text()).get("train_set_file")
        if stored is None:
            raise CliError("model does not record its training set")
        test_set = _read_angles_csv(run.input(model_path.parent / stored))
        warnings.warn("evaluating on the training set: the score leaks training data and "
                      "overstates generalization", stacklevel=1)
        print("warning: evaluating on the training set (data leakage)", file=sys.stderr)
    elif args.test:
        test_set = _read_angles_csv(run.input(args.test))
    else:
        test_set = generate_dataset(model.expert, args.test_samples, run.seed())
    if test_set.shape[1] != model.expert.n:
        raise CliError(f"test angles have {test_set.shape[1]} columns, expert has {model.expert.n}")
    ev = evaluate_pose_map(model, test_set, w, args.corr, xi=args.xi)
    write_evaluation_csv(run.output("eval.csv"), test_set, np.asarray(model(test_set)), ev.distances)
    result = {"test": args.test or "fresh", "n": len(test_set), "mean": ev.mean, "max": ev.max,
              "leakage": args.test == "same"}
    _dump(run, "eval_map.json", result)
    return result


def cmd_record_expert(args, run: Run) -> dict:
    spec = parse_spec(args.spec, run)
    model = DynamicsModel(spec, friction=args.friction)
    seed = run.seed()
    try:
        trajs = record_many(model, args.n, seed, duration=args.duration, dt=args.dt,
                            substeps=args.substeps, control_substeps=args.control_substeps)
    except FloatingPointError as exc:
        raise CliError(str(exc), EXIT_DIVERGED) from exc
    goals = sample_goals(spec, args.n, seed)
    names = []
    for k, traj in enumerate(trajs):
        name = f"traj_{k:03d}.csv"
        write_trajectory_csv(run.output(name), traj)
        names.append(name)
    errors = [float(np.max(np.abs(wrap_angle(g - t.q[-1])))) for g, t in zip(goals, trajs)]
    _write_angles_csv(run.output("goals.csv"), goals)
    (run.out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    run.outputs.append(run.out / "spec.json")
    result = {"n": args.n, "files": names, "goal_seed": seed, "max_final_error": max(errors),
              "settled": int(sum(e <= 0.05 for e in errors))}
    _dump(run, "record.json", result)
    return result


def _load_trajectories(run: Run, where: str) -> list[Trajectory]:
    path = run.input(where)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    files = [f for f in files if f.name.startswith("traj")] or files
    if not files:
        raise CliError(f"no trajectory CSVs in {path}")
    out = []
    for f in files:
        run.input(f)
        try:
            out.append(read_trajectory_csv(f))
        except (ValueError, StopIteration) as exc:
            raise CliError(f"invalid trajectory {f}: {exc}") from exc
    return out


def cmd_train_rl(args, run: Run) -> dict:
    expert, learner = parse_spec(args.expert, run), parse_spec(args.learner, run)
    trajs = _load_trajectories(run, args.trajs)
    w = parse_weights(args.weights)
    if isinstance(w, str):
        raise CliError("RL rewards need explicit weights")
    env_cfg = EnvConfig(weights=w, corr=args.corr, friction=args.friction, xi=args.xi,
                        dt=trajs[0].dt)
    cfg = PpoConfig(gamma=args.gamma, total_steps=args.steps, rollout_steps=args.rollout,
                    num_envs=args.num_envs, learning_rate=args.lr, epochs=args.epochs,
                    minibatch=args.minibatch, seed=run.seed())
    try:
        res = train(expert, learner, trajs, cfg, env_cfg)
    except (ValueError, RuntimeError) as exc:
        raise CliError(str(exc)) from exc
    except FloatingPointError as exc:
        raise CliError(str(exc), EXIT_DIVERGED) from exc
    res.agent.save(run.output("policy.json"), env_cfg)
    write_rl_curve_csv(run.output("curve.csv"), res.curve)
    curve = np.array(res.curve, dtype=float)
    write_line_svg(run.output("curve.svg"), {"mean distance": (curve[:, 1], curve[:, 3])},
                   title="PPO training", xlabel="environment steps", ylabel="mean episode distance")
    result = {"updates": len(res.curve), "steps": int(curve[-1, 1]),
              "final_mean_distance": float(curve[-1, 3]), "trajectories": len(trajs)}
    _dump(run, "train_rl.json", result)
    return result


def cmd_eval_rl(args, run: Run) -> dict:
    traj_path = run.input(args.traj)
    try:
        traj = read_trajectory_csv(traj_path)
    except (ValueError, StopIteration) as exc:
        raise CliError(f"invalid trajectory {traj_path}: {exc}") from exc
    if args.policy == "zero":
        if not (args.expert and args.learner):
            raise CliError("--policy zero needs --expert and --learner")
        expert, learner = parse_spec(args.expert, run), parse_spec(args.learner, run)
        policy, env_cfg = zero_policy(learner), EnvConfig(dt=traj.dt)
    else:
        try:
            policy, env_cfg = Agent.load(run.input(args.policy))
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise CliError(f"invalid policy file {args.policy}: {exc}") from exc
        expert, learner = policy.expert, policy.learner
    try:
        rows = evaluate(policy, expert, learner, traj, env_cfg)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    except FloatingPointError as exc:
        raise CliError(str(exc), EXIT_DIVERGED) from exc
    write_episode_csv(run.output("eval.csv"), rows)
    arr = np.array(rows, dtype=float)
    write_line_svg(run.output("eval.svg"), {"distance": (arr[:, 0], arr[:, 2])},
                   title="imitation distance", xlabel="step", ylabel="distance")
    result = {"steps": len(rows), "mean_distance": mean_distance(rows),
              "return": float(arr[:, 1].sum())}
    _dump(run, "eval_rl.json", result)
    return result


COMMANDS = {
    "pose-imitate": cmd_pose_imitate,
    "distance": cmd_distance,
    "scan": cmd_scan,
    "train-map": cmd_train_map,
    "eval-map": cmd_eval_map,
    "record-expert": cmd_record_expert,
    "train-rl": cmd_train_rl,
    "eval-rl": cmd_eval_rl,
}


def _replay(manifest_path: str) -> int:
    path = Path(manifest_path)
    if not path.exists():
        print(f"error: no such manifest: {path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        manifest = RunManifest.read(path)
    except (TypeError, json.JSONDecodeError) as exc:
        print(f"error: invalid manifest {path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return main(manifest.argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        if args.manifest:
            return _replay(args.manifest)
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    started = time.time()
    try:
        run = Run(args)
        result = COMMANDS[args.command](args, run)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    config = {k: v for k, v in vars(args).items() if k not in ("manifest",)}
    manifest = RunManifest(
        command=args.command, argv=argv, config=config, seeds={"seed": args.seed},
        inputs=run.inputs,
        outputs={str(p): _sha256(p) for p in run.outputs},
        started=time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        wall_clock_s=round(time.time() - started, 3))
    manifest.write(args.manifest or run.out / "manifest.json")
    print(json.dumps(result, sort_keys=True, default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
