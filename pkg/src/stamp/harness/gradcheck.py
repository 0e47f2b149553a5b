"""Autodiff against central finite differences for domain costs and random programs."""
from __future__ import annotations

from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from .. import diffcore as dc
from .. import physsim as ps


@dataclass
class GradCheck:
    label: str
    rel_error: float
    stable: bool = True  # contact topology unchanged under the FD perturbations

    def passed(self, tol):
        return self.stable and self.rel_error < tol


def _stable(domain, theta, step):
    base = domain.topology(theta)
    if base is None:
        return True
    for i in range(theta.size):
        for s in (step, -step):
            x = theta.copy()
            x[i] += s
            if domain.topology(x) != base:
                return False
    return True


def check_domain(domain, n=10, seed=0, step=1e-6, max_draws=None):
    """Compare gradients of ``domain.cost`` at ``n`` random particles.

    Particles are drawn uniformly from the domain's initial box. Draws whose
    contact topology changes under the perturbation are skipped (at most
    ``max_draws`` draws in total, default ``5 n``).
    """
    prog = domain.program()
    low, high = domain.init_bounds()
    rng = np.random.default_rng(seed)
    out, draws = [], 0
    max_draws = 5 * n if max_draws is None else max_draws
    while len(out) < n and draws < max_draws:
        draws += 1
        theta = rng.uniform(low, high)
        if not _stable(domain, theta, step):
            continue
        _, g = dc.evaluate_with_gradient(prog, theta, clip=np.inf)
        fd = dc.finite_difference_gradient(prog, theta, step)
        out.append(GradCheck(f"{domain.name}[{draws - 1}]", dc.relative_error(g, fd)))
    return out


def check_random_programs(count=20, seed=0, n_inputs=3, step=1e-5):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        prog = dc.random_program(seed * 1000 + k, n_inputs)
        x = rng.uniform(-1.0, 1.0, n_inputs)
        _, g = dc.evaluate_with_gradient(prog, x, clip=np.inf)
        fd = dc.finite_difference_gradient(prog, x, step)
        out.append(GradCheck(prog.name, dc.relative_error(g, fd)))
    return out


def _rollout_scenes():
    """Small worlds recorded at every integration step (one substep per control)."""
    table = ps.table_walls(0.0, 0.0, 1.0, 2.0)
    balls = ps.World((ps.Disc(0.05, 0.05, 0.3, "cue"), ps.Disc(0.05, 0.05, 0.3, "target")), table,
                     stiffness=1e4, contact_damping=10.0, dt=1.0 / 480.0, substeps=1)
    push = ps.World((ps.Disc(0.02, 0.2, 0.0, "pusher"), ps.Box((0.05, 0.05), 0.5, 10.0, 50.0, "cube")), (),
                    stiffness=2e3, contact_damping=5.0, dt=1.0 / 480.0, substeps=1)

    def balls_state(theta):
        return ps.make_state(balls, disc_pos=jnp.array([[0.5, 0.4], [0.5, 1.0]]),
                             disc_vel=jnp.stack([theta[:2], jnp.zeros(2)]))

    def push_state(theta):
        return ps.make_state(push, disc_pos=jnp.array([[-0.08, 0.0]]), disc_vel=theta[:2][None],
                             box_pos=jnp.zeros((1, 2)))

    # (name, world, state builder, horizon, sampler of theta = [v0 (2), constant force (2)])
    return [
        ("billiards_collision", balls, balls_state, 360,
         lambda rng: np.concatenate([[rng.uniform(-0.4, 0.4), rng.uniform(1.5, 2.5)], rng.uniform(-0.02, 0.02, 2)])),
        ("box_push", push, push_state, 240,
         lambda rng: np.concatenate([[rng.uniform(0.2, 0.4), rng.uniform(-0.05, 0.05)],
                                     [rng.uniform(0.5, 1.5), rng.uniform(-0.2, 0.2)]])),
    ]


def check_rollouts(count=5, seed=0, step=1e-6):
    """Rollout gradients w.r.t. initial velocity and a constant force vs central differences.

    Each scene is checked at ``count`` random parameter draws whose contact
    topology is unchanged under every perturbation; unstable draws are
    redrawn (up to ``5 * count`` per scene).
    """
    rng = np.random.default_rng(seed)
    out = []
    for name, world, make, horizon, sample in _rollout_scenes():
        nd = len(world.discs)

        def traj_of(theta, world=world, make=make, horizon=horizon, nd=nd):
            controls = jnp.broadcast_to(theta[2:4], (horizon, nd, 2))
            return ps.rollout(world, make(theta), horizon, controls=controls)

        def loss(theta, traj_of=traj_of):
            last = traj_of(theta).states
            return (jnp.sum(last.disc_pos[-1] ** 2) + jnp.sum(last.box_pos[-1] ** 2)
                    + jnp.sum(last.box_yaw[-1] ** 2))

        prog = dc.Program(loss, 4, name=name)
        done = draws = 0
        while done < count and draws < 5 * count:
            draws += 1
            theta = sample(rng)
            base = ps.contact_topology(world, traj_of(jnp.asarray(theta)))
            stable = all(ps.contact_topology(world, traj_of(jnp.asarray(theta + s * e))) == base
                         for e in np.eye(4) for s in (step, -step))
            if not stable:
                continue
            _, g = dc.evaluate_with_gradient(prog, theta, clip=np.inf)
            fd = dc.finite_difference_gradient(prog, theta, step)
            out.append(GradCheck(f"{name}[{draws - 1}]", dc.relative_error(g, fd)))
            done += 1
    return out
