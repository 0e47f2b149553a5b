"""Both ways of freeing a target are found in the same pick-and-place run.

Target A holds cube2 and target B holds cube3; cube1 can only go where
the blocker has been moved. Run: python demos/pickplace_plans.py
"""
import os

from stamp.harness import load_config, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    cfg = load_config(os.path.join(HERE, os.pardir, "configs", "pickplace.json"), {"output": ""})
    res = run_experiment(cfg)
    dom = res.domain
    for b in res.modes:
        if not b.solved:
            continue
        theta = res.final.theta[b.best_particle]
        _, goals = dom.split(theta)
        print(f"target {dom.family(theta)}: {b.plan} (x{b.count})")
        print("   goals:", "  ".join(f"({g[0]:.2f}, {g[1]:.2f})" for g in goals))
    unsolved = sum(b.count for b in res.modes if not b.solved)
    print(f"{unsolved} of {len(res.plans)} particles ended on unsolved plans")
