"""Dynamic imitation with PPO on a pair of 2-link arms.

Records one PID expert trajectory, trains a policy against the negative
embodiment distance, and plots the per-step distance of the trained policy
next to the zero-torque baseline.  Takes about half a minute.

    python3 demos/motion_imitation.py [out_dir] [steps]
"""
import sys
from pathlib import Path

from embodiment_imitation.dynamics import DynamicsModel, record_many
from embodiment_imitation.embodiment import lock_joints, planar_chain
from embodiment_imitation.ppo import PpoConfig, evaluate, mean_distance, train, zero_policy
from embodiment_imitation.plotting import write_line_svg

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 61_440
out.mkdir(parents=True, exist_ok=True)

expert = planar_chain(2)
traj = record_many(DynamicsModel(expert, friction=0.05), 1, seed=7)[0]
series = {}
for label, learner in [("identical", expert), ("joint 2 locked", lock_joints(expert, {2}))]:
    result = train(expert, learner, [traj], PpoConfig(total_steps=steps))
    rows = evaluate(result.agent, expert, learner, traj)
    series[label] = ([r[0] for r in rows], [r[2] for r in rows])
    print(f"{label}: mean distance {mean_distance(rows):.4f}")
rows = evaluate(zero_policy(expert), expert, expert, traj)
series["zero torque"] = ([r[0] for r in rows], [r[2] for r in rows])
print(f"zero torque: mean distance {mean_distance(rows):.4f}")
write_line_svg(out / "motion_distance.svg", series, title="distance to expert", xlabel="step",
               ylabel="distance")
