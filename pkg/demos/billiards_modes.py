"""One billiards run finds several bank shots that pocket the target ball.

Each plan lists the walls the cue ball touches before it reaches the
target ball. Run: python demos/billiards_modes.py [n_particles]
"""
import os
import sys

import numpy as np

from stamp.harness import load_config, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 64
    cfg = load_config(os.path.join(HERE, os.pardir, "configs", "billiards.json"), {"output": "", "n": n})
    res = run_experiment(cfg)
    print(f"{len(res.modes)} plans among {n} particles")
    for b in res.modes:
        u0 = res.final.theta[b.best_particle]
        tag = "pocketed" if b.solved else "missed"
        print(f"  {b.plan:<12} x{b.count:<3} best u0 = ({u0[0]:+.2f}, {u0[1]:+.2f}) m/s  {tag}")
    print(f"mean cost {np.mean(res.costs):.4f}; solved plans: {', '.join(res.solved_plans()) or 'none'}")
