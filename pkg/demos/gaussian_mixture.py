"""Particles on a two-mode 1D mixture split between the modes.

Run: python demos/gaussian_mixture.py
"""
import os

import numpy as np

from stamp.harness import load_config, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))


def histogram(x, lo=-6.0, hi=6.0, bins=24):
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    for c, left in zip(counts, edges):
        print(f"{left:6.1f} | {'#' * c}")


if __name__ == "__main__":
    cfg = load_config(os.path.join(HERE, os.pardir, "configs", "gaussian_mixture.json"), {"output": ""})
    res = run_experiment(cfg)
    x = res.final.theta[:, 0]
    histogram(x)
    for b in res.modes:
        members = x[[p == b.plan for p in res.plans]]
        print(f"{b.plan}: {b.count} particles, mean {members.mean():+.3f}, spread {members.std():.3f}")
