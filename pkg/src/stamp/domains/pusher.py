"""Block pushing: push a cube into a goal region with a sequence of side pushes.

Particles are ``theta = [a_1 .. a_K, g_1 .. g_K]``: relaxed side choices
(north, east, south, west) and the cube pose ``g_k = (x, y, phi)`` each
push should reach. Per phase a pusher disc follows a side-specific movement
primitive from the contact point on the cube's current pose to the contact
point on ``g_k``, tracked by a PD controller in the simulator.

Relaxation: each phase is simulated once per side and the cube state handed
to the next phase is the ``softmax(a_k)``-weighted blend of the four
outcomes. With a one-hot ``a_k`` that is exactly the physical push.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from .. import diffcore as dc
from .. import dmp
from .. import kernels as kern
from .. import physsim as ps
from ..errors import DimensionError, ParameterError
from ..relaxation import ActionSpace
from ..svgd import Layout
from .base import Domain

SIDES = ("N", "E", "S", "W")
SIDE_NORMALS = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]])
DEFAULT_BANK = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "pusher_bank.json")


@dataclass(frozen=True)
class PusherSpec:
    K: int = 2
    T: int = 240  # control steps per phase
    cube_start: tuple = (0.0, 0.0, 0.0)
    goal: tuple = (0.3, 0.3)
    tolerance: float = 0.05
    beta_target: float = 100.0
    beta_traj: float = 1.0
    cube_half: float = 0.05
    cube_mass: float = 0.5
    cube_damping: float = 10.0
    cube_angular_damping: float = 50.0
    pusher_radius: float = 0.02
    pusher_mass: float = 0.2
    approach_gap: float = 0.005  # pusher starts this far off the face
    press_depth: float = 0.002  # and ends this far into the face at the goal pose
    gains: tuple = dmp.DEFAULT_GAINS
    stiffness: float = 2e3
    contact_damping: float = 5.0
    dt: float = 1.0 / 480.0
    substeps: int = 2
    u_bound: float = 3.0
    temperature: float = 1.0
    init_goal_low: tuple = (-0.1, -0.1, -0.3)
    init_goal_high: tuple = (0.5, 0.5, 0.3)
    goal_low: tuple = (-0.3, -0.3, -1.0)  # box the goals are kept in during inference
    goal_high: tuple = (0.7, 0.7, 1.0)
    dmp_bank: str = ""
    kernel_weights: dict = field(default_factory=lambda: {"g_xy": 1.0, "z": 1.0, "g_phi": 0.05})
    bandwidths: dict = field(default_factory=lambda: {"g_xy": None, "z": None})

    def __post_init__(self):
        if self.K < 1 or self.T < 1:
            raise ParameterError("pusher: K and T must be >= 1")
        if not (self.beta_target > 0 and self.beta_traj >= 0):
            raise ParameterError("pusher: beta_target must be positive, beta_traj non-negative")
        if not self.tolerance >= 0:
            raise ParameterError("pusher: tolerance must be non-negative")

    @classmethod
    def from_config(cls, cfg):
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"pusher: unknown keys {sorted(unknown)}")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items()})


def manhattan(p, q):
    return jnp.sum(dc.abs(p - q), axis=-1)


def trajectory_loss(goals_xy, start_xy):
    """Detour of the intermediate goals from a coordinate-monotone path.

    ``sum_k D(g_{k-1}, g_k) + D(g_k, g_K) - D(g_{k-1}, g_K)`` with Manhattan
    ``D`` and ``g_0`` the cube's start.
    """
    goals_xy = jnp.asarray(goals_xy).reshape(-1, 2)
    prev = jnp.concatenate([jnp.asarray(start_xy)[None, :2], goals_xy[:-1]])
    last = goals_xy[-1]
    return jnp.sum(manhattan(prev, goals_xy) + manhattan(goals_xy, last) - manhattan(prev, last))


def target_loss(cube_xy, goal, tol):
    """Hinge on each coordinate: zero inside the square of half-width ``tol``."""
    dx = dc.relu(dc.abs(cube_xy[0] - goal[0]) - tol)
    dy = dc.relu(dc.abs(cube_xy[1] - goal[1]) - tol)
    return dx ** 2 + dy ** 2


def _rot2(phi):
    c, s = jnp.cos(phi), jnp.sin(phi)
    return jnp.array([[c, -s], [s, c]])


def contact_point(pose, side_normal, offset):
    """Point ``offset`` outside the face with local normal ``side_normal``."""
    return pose[:2] + _rot2(pose[2]) @ (side_normal * offset)


def synthesize_demos(spec, side, lengths=(0.1, 0.2, 0.3), offsets=(-0.02, 0.0, 0.02), duration=0.8):
    """Straight pushes of the cube from one side, recorded from the simulator.

    A disc tracks a minimum-jerk reference against the cube; the disc's
    realized path becomes the demonstration.
    """
    world = _world(spec)
    n = SIDE_NORMALS[side]
    tangent = np.array([-n[1], n[0]])
    ctrl_dt = world.control_dt
    demos = []
    for L in lengths:
        for off in offsets:
            start = n * (spec.cube_half + spec.pusher_radius + spec.approach_gap) + tangent * off
            end = start - n * L
            ref = dmp.minimum_jerk(start, end, duration, ctrl_dt)
            steps = int(round(1.2 * duration / ctrl_dt))
            pad = steps + 1 - len(ref.positions)
            pos = np.concatenate([ref.positions, np.repeat(ref.positions[-1:], pad, 0)])
            vel = np.concatenate([ref.velocities, np.zeros((pad, 2))])
            reference = dmp.Reference(jnp.asarray(pos)[:, None, :], jnp.asarray(vel)[:, None, :], (0,))
            x0 = ps.make_state(world, disc_pos=start[None], box_pos=np.zeros((1, 2)))
            traj = dmp.tracking_controls(reference, world, x0, spec.gains)
            demos.append(dmp.Demonstration.from_positions(np.asarray(traj.states.disc_pos[:, 0]), ctrl_dt))
    return demos


def build_bank(spec, n_basis=10, duration=0.8):
    bank = dmp.DMPBank(meta={"domain": "pusher", "sides": list(SIDES), "duration": duration})
    for i, name in enumerate(SIDES):
        demos = synthesize_demos(spec, i, duration=duration)
        bank.models[name] = dmp.fit(demos, n_basis=n_basis, tau=duration, alpha=4.0)
    return bank


def _world(spec):
    cube = ps.Box((spec.cube_half, spec.cube_half), spec.cube_mass, spec.cube_damping,
                  spec.cube_angular_damping, "cube")
    pusher = ps.Disc(spec.pusher_radius, spec.pusher_mass, 0.0, "pusher")
    return ps.World((pusher, cube), (), (), stiffness=spec.stiffness,
                    contact_damping=spec.contact_damping, dt=spec.dt, substeps=spec.substeps)


class Pusher(Domain):
    name = "pusher"

    def __init__(self, spec=None, bank=None):
        self.spec = s = spec or PusherSpec()
        self.world = _world(s)
        if bank is None:
            path = s.dmp_bank or DEFAULT_BANK
            bank = dmp.DMPBank.load(path) if os.path.exists(path) else build_bank(s)
        missing = [k for k in SIDES if k not in bank.models]
        if missing:
            raise ParameterError(f"pusher: DMP bank lacks sides {missing}")
        self.bank = bank
        self._proto = bank.models[SIDES[0]]
        for name in SIDES:
            m = bank.models[name]
            if (m.n_basis, m.dims) != (self._proto.n_basis, 2) or m.tau != self._proto.tau \
                    or m.alpha != self._proto.alpha or m.K != self._proto.K:
                raise ParameterError("pusher: all side primitives must share hyperparameters")
        self._weights = jnp.asarray(np.stack([bank.models[k].weights for k in SIDES]))
        self.space = ActionSpace(4, s.K, s.u_bound, SIDES)
        self.layout = Layout.of(*[(f"a{k + 1}", 4) for k in range(s.K)],
                                *[(f"g{k + 1}", 3) for k in range(s.K)],
                                relaxed=tuple(f"a{k + 1}" for k in range(s.K)))
        self.kernel = kern.KernelSpec("pusher_composite", dict(s.bandwidths), dict(s.kernel_weights),
                                      K=s.K, m=4)

    @classmethod
    def from_config(cls, cfg):
        return cls(PusherSpec.from_config(cfg))

    # -- layout helpers -----------------------------------------------------
    def split(self, theta):
        theta = jnp.asarray(theta)
        if theta.shape[-1] != self.layout.size:
            raise DimensionError(f"pusher particle must have {self.layout.size} entries")
        K = self.spec.K
        return theta[:4 * K].reshape(K, 4), theta[4 * K:7 * K].reshape(K, 3)

    # -- simulation ---------------------------------------------------------
    def _push(self, weights, normal, cube, goal):
        """One phase with one side: returns the cube's final (pos, vel, yaw, omega)."""
        s = self.spec
        pos, vel, yaw, omega = cube
        start = contact_point(jnp.concatenate([pos, yaw[None]]), normal,
                              s.cube_half + s.pusher_radius + s.approach_gap)
        end = contact_point(goal, normal, s.cube_half + s.pusher_radius - s.press_depth)
        dt = self.world.control_dt
        ref = dmp.rollout(self._proto, start, end, s.T, dt, weights=weights)
        reference = dmp.Reference(ref.positions[:, None, :], ref.velocities[:, None, :], (0,))
        x0 = ps.SimState(start[None], jnp.zeros((1, 2)), pos[None], vel[None], yaw[None], omega[None],
                         jnp.zeros(2), jnp.asarray(0.0), jnp.asarray(0, dtype=jnp.int32))
        traj = ps.rollout(self.world, x0, s.T, controller=dmp.tracking_controller(reference, s.gains))
        last = jax.tree_util.tree_map(lambda a: a[-1], traj.states)
        return last.box_pos[0], last.box_vel[0], last.box_yaw[0], last.box_omega[0]

    def simulate(self, theta, temperature=None, hard=False):
        """Cube state after each phase, shape ``(K + 1, 6)`` rows ``[x, y, yaw, vx, vy, omega]``."""
        s = self.spec
        a, g = self.split(theta)
        temp = s.temperature if temperature is None else temperature
        z = jax.nn.one_hot(jnp.argmax(a, axis=-1), 4) if hard else dc.softmax(a / temp, axis=-1)
        normals = jnp.asarray(SIDE_NORMALS)
        x, y, yaw0 = s.cube_start
        cube = (jnp.array([x, y], dtype=jnp.float64), jnp.zeros(2), jnp.asarray(float(yaw0)), jnp.asarray(0.0))
        rows = [jnp.concatenate([cube[0], cube[2][None], cube[1], cube[3][None]])]
        push = jax.vmap(self._push, in_axes=(0, 0, None, None))
        for k in range(s.K):
            p, v, th, om = push(self._weights, normals, cube, g[k])
            wk = z[k]
            cube = (wk @ p, wk @ v, wk @ th, wk @ om)
            rows.append(jnp.concatenate([cube[0], cube[2][None], cube[1], cube[3][None]]))
        return jnp.stack(rows)

    def _cost_parts(self, theta, hard=False):
        s = self.spec
        a, g = self.split(theta)
        states = self.simulate(theta, hard=hard)
        final = states[-1, :2]
        l_target = target_loss(final, jnp.asarray(s.goal), s.tolerance)
        l_traj = trajectory_loss(g[:, :2], jnp.asarray(s.cube_start[:2]))
        return l_target, l_traj, states

    def cost(self, theta):
        l_target, l_traj, _ = self._cost_parts(theta)
        return self.spec.beta_target * l_target + self.spec.beta_traj * l_traj

    def plan_cost(self, theta):
        l_target, l_traj, _ = self._cost_parts(theta, hard=True)
        return self.spec.beta_target * l_target + self.spec.beta_traj * l_traj

    def _feature_fn(self):
        K, temp = self.spec.K, self.spec.temperature
        return lambda theta: kern.pusher_features(theta, K, 4, temp)

    def features(self, theta):
        return np.asarray(self._feature_fn()(jnp.asarray(theta)))

    def init_bounds(self):
        s = self.spec
        lo = np.concatenate([np.full(4 * s.K, -s.u_bound), np.tile(s.init_goal_low, s.K)])
        hi = np.concatenate([np.full(4 * s.K, s.u_bound), np.tile(s.init_goal_high, s.K)])
        return lo, hi

    def bounds(self):
        s = self.spec
        lo = np.concatenate([np.full(4 * s.K, -s.u_bound), np.tile(s.goal_low, s.K)])
        hi = np.concatenate([np.full(4 * s.K, s.u_bound), np.tile(s.goal_high, s.K)])
        return lo, hi

    # -- reporting ----------------------------------------------------------
    def _report(self, theta):
        if not hasattr(self, "_report_fn"):
            def rep(th):
                soft = self._cost_parts(th)
                hard = self._cost_parts(th, hard=True)
                return soft[0], soft[1], hard[0], hard[2][-1]
            self._report_fn = jax.jit(rep)
        return [np.asarray(v) for v in self._report_fn(jnp.asarray(theta, dtype=jnp.float64))]

    def plan(self, theta):
        return self.space.render(self.space.plan_indices(np.asarray(theta)[:self.space.dim]))

    def diagnostics(self, theta):
        l_target, l_traj, hard_target, hard_final = self._report(theta)
        return {"L_target": float(l_target), "L_traj": float(l_traj),
                "L_target_plan": float(hard_target), "cube_final": hard_final[:3].tolist()}

    def solved(self, theta, cost=None):
        """The discrete plan (one-hot sides) leaves the cube inside the goal region."""
        return bool(self._report(theta)[2] == 0.0)

    def topology(self, theta):
        return None
