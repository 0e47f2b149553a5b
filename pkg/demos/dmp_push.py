"""Fit a movement primitive to a smooth reach and reuse it for new goals.

Run: python demos/dmp_push.py
"""
import numpy as np

from stamp import dmp

if __name__ == "__main__":
    dt = 2e-3
    demo = dmp.minimum_jerk([0.0, 0.0], [0.2, 0.0], 1.0, dt)
    model = dmp.fit(demo, n_basis=15, tau=1.0, alpha=4.0)
    print(f"fitted {model.n_basis} basis functions per dimension, residual {model.residual:.2e}")
    for goal in ([0.2, 0.0], [0.4, 0.1], [-0.1, 0.3]):
        traj = dmp.rollout(model, [0.0, 0.0], goal, model.settle_steps(dt), dt)
        end = np.asarray(traj.positions[-1])
        peak = float(np.max(np.linalg.norm(np.asarray(traj.velocities), axis=1)))
        print(f"goal {goal}: ends at ({end[0]:+.4f}, {end[1]:+.4f}), peak speed {peak:.3f}")
