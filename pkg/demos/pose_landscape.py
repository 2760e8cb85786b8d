"""Distance landscape of a 2-link learner imitating a 2-link expert.

Scans the learner's angle grid under static and state-dependent
correspondence, counts local minima, and solves the pose from a few starts.

    python3 demos/pose_landscape.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from embodiment_imitation.distance import DistanceWeights, ROTATION_ONLY, grid_scan, local_minima, \
    write_scan_csv
from embodiment_imitation.embodiment import planar_chain
from embodiment_imitation.pose import SolveConfig, solve_pose

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
spec, q = planar_chain(2), np.array([1.5, -1.5])

for name, w, corr in [("static_rot", ROTATION_ONLY, "static"),
                      ("binary_tr1.5", DistanceWeights(1.5, 1.0), "binary")]:
    angles, Z = grid_scan(spec, q, spec, 180, w, corr)
    write_scan_csv(out / f"scan_{name}.csv", angles, Z)
    minima = [(round(float(angles[a]), 2), round(float(angles[b]), 2)) for a, b in local_minima(Z)]
    print(f"{name}: {len(minima)} local minima at {minima}")
    for seed in range(3):
        sol = solve_pose(spec, spec, q, w, corr, SolveConfig(seed=seed))
        print(f"  seed {seed}: q_hat={np.round(sol.q, 3)} distance={sol.distance:.2e}")
