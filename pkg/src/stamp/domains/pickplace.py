"""Pick and place in a side view: get cube1 into target A or B.

Cubes have unit size and rest on the ground at height 0.5. Cube2 sits on
target A and cube3 on target B, so one of them has to be moved aside
before cube1 can be placed. The gripper is a point with an aperture; it
travels in a straight line to the goal ``g_k`` of each phase. A cube held
at the start of a phase follows the gripper; picking and releasing take
effect at the end of the phase.

Particles are ``theta = [a_1 .. a_K, g_1 .. g_K]`` with ``a_k`` the relaxed
choice among the six actions pick/place x cube1..3 and ``g_k = (x, y)``.
The cost is a sum of per-phase terms; inference runs one stage per phase
with earlier phases frozen.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .. import diffcore as dc
from .. import kernels as kern
from ..errors import DimensionError, ParameterError
from ..relaxation import ActionSpace
from ..svgd import Layout, PosteriorModel
from .base import Domain, Stage, stop

CUBES = ("cube1", "cube2", "cube3")
ACTIONS = tuple(f"pick({c})" for c in CUBES) + tuple(f"place({c})" for c in CUBES)


@dataclass(frozen=True)
class PickPlaceSpec:
    K: int = 4
    target_a: tuple = (1.0, 0.5)
    target_b: tuple = (9.0, 0.5)
    cubes: tuple = ((5.0, 0.5), (1.0, 0.5), (9.0, 0.5))  # cube1 free, cube2 on A, cube3 on B
    ee_start: tuple = (5.0, 3.0)
    cube_size: float = 1.0
    open_width: float = 3.0
    clear_radius: float = 1.0  # cubes 2 and 3 must end at least this far from both targets
    grasp_scale: float = 0.5  # how close the gripper must be for a pick to take hold
    gamma_pre: float = 1.0
    gamma_post: float = 1.0
    hold_eps: float = 1e-3
    steps: int = 20  # samples per phase in rendered paths
    u_bound: float = 4.0
    init_spread: float = 0.5  # relaxed action entries start in [-init_spread, init_spread]
    temperature: float = 1.0
    solved_threshold: float = 0.1
    init_low: tuple = (-1.0, 0.5)
    init_high: tuple = (11.0, 3.0)
    goal_low: tuple = (-2.0, 0.0)
    goal_high: tuple = (12.0, 4.0)
    kernel_weights: dict = field(default_factory=lambda: {"g_xy": 1.0, "z": 1.0})
    bandwidths: dict = field(default_factory=lambda: {"g_xy": None, "z": None})

    def __post_init__(self):
        if self.K < 1:
            raise ParameterError("pickplace: K must be >= 1")
        for name in ("gamma_pre", "gamma_post", "hold_eps", "open_width", "grasp_scale", "cube_size"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"pickplace: {name} must be positive")
        if len(self.cubes) != 3:
            raise DimensionError("pickplace: exactly three cubes")

    @classmethod
    def from_config(cls, cfg):
        unknown = set(cfg) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"pickplace: unknown keys {sorted(unknown)}")
        def conv(v):
            return tuple(conv(x) for x in v) if isinstance(v, list) else v
        return cls(**{k: conv(v) for k, v in cfg.items()})


class PPState(NamedTuple):
    ee: jnp.ndarray  # (2,)
    width: jnp.ndarray  # gripper aperture
    cubes: jnp.ndarray  # (3, 2)
    hold: jnp.ndarray  # (3,) soft "held" per cube


def initial_state(spec):
    return PPState(jnp.asarray(spec.ee_start, dtype=jnp.float64), jnp.asarray(spec.open_width, dtype=jnp.float64),
                   jnp.asarray(spec.cubes, dtype=jnp.float64), jnp.zeros(3))


# -- condition losses ---------------------------------------------------------

def sqdist(p, q):
    return jnp.sum((p - q) ** 2, axis=-1)


def ee_distances(state):
    return sqdist(state.ee[None, :], state.cubes)


def holding_like(state, eps=1e-3):
    """``-log((1 - exp(-(d_ee_c + d_grip)) + eps) / (1 + eps))`` per cube.

    Near zero when the gripper is far and open, ``log(1/eps + 1)`` when it
    is closed on the cube.
    """
    d = ee_distances(state) + state.width ** 2
    return -jnp.log((1.0 - jnp.exp(-d) + eps) / (1.0 + eps))


def ee_free(state, eps=1e-3):
    return jnp.max(holding_like(state, eps))


def ee_holding(state, c):
    return ee_distances(state)[c] + state.width ** 2


def cube_free(state, c, size=1.0):
    """Squared height gap to the nearest cube resting above ``c`` (0 if none)."""
    xc = state.cubes[c]
    others = jnp.array([j for j in range(3) if j != c])
    xo = state.cubes[others]
    above = stop((xo[:, 1] > xc[1]) & (dc.abs(xo[:, 0] - xc[0]) < size))
    gap2 = (xo[:, 1] - xc[1]) ** 2
    big = jnp.max(gap2) + 1.0
    return jnp.where(jnp.any(above), jnp.min(jnp.where(above, gap2, stop(big))), 0.0)


def can_grasp(state, c, g, size=1.0):
    return cube_free(state, c, size) + sqdist(g, state.cubes[c])


def can_place(state, c, g, rest_height=0.5):
    others = jnp.array([j for j in range(3) if j != c])
    return (g[1] - rest_height) ** 2 + jnp.sum(jnp.exp(-sqdist(state.cubes[others], g[None, :])))


def action_losses(s0, s1, g, spec):
    """Loss of every action given the phase's start/end states, shape ``(6,)``."""
    gp, gq, eps = spec.gamma_pre, spec.gamma_post, spec.hold_eps
    rest = 0.5 * spec.cube_size
    picks = [gp * (ee_free(s0, eps) + can_grasp(s0, c, g, spec.cube_size)) + gq * ee_holding(s1, c)
             for c in range(3)]
    places = [gp * (ee_holding(s0, c) + can_place(s0, c, g, rest)) + gq * ee_free(s1, eps)
              for c in range(3)]
    return jnp.stack(picks + places)


def region_exclusion(x, spec):
    """Squared depth inside the keep-out discs around both targets."""
    a, b = jnp.asarray(spec.target_a), jnp.asarray(spec.target_b)
    r = spec.clear_radius
    return (dc.relu(r - dc.safe_norm(x - a)) ** 2 + dc.relu(r - dc.safe_norm(x - b)) ** 2)


def cube1_target(cubes, spec):
    """Distance of cube1 to whichever target its blocker has left more open."""
    a, b = jnp.asarray(spec.target_a), jnp.asarray(spec.target_b)
    zeta_a, zeta_b = sqdist(cubes[1], a), sqdist(cubes[2], b)
    return dc.select(zeta_a >= zeta_b, sqdist(cubes[0], a), sqdist(cubes[0], b))


def target_loss(s0, s1, spec):
    w = holding_like(s0, spec.hold_eps)
    per_cube = jnp.stack([cube1_target(s1.cubes, spec),
                          region_exclusion(s1.cubes[1], spec), region_exclusion(s1.cubes[2], spec)])
    return jnp.sum(w * per_cube)


# -- kinematics ---------------------------------------------------------------

def phase_end(state, z, g, spec):
    """State after moving the gripper to ``g`` under action weights ``z``."""
    shift = g - state.ee
    cubes = state.cubes + state.hold[:, None] * shift[None, :]
    p_pick, p_place = z[:3], z[3:]
    width = spec.open_width * jnp.sum(p_place)
    gate = jnp.exp(-sqdist(g[None, :], cubes) / spec.grasp_scale ** 2)
    hold = (state.hold + p_pick * (1.0 - state.hold) * gate) * (1.0 - jnp.sum(p_place))
    return PPState(g, width, cubes, hold)


def phase_path(state, z, g, spec, steps=None):
    """Gripper, aperture and cube positions along the phase, ``steps + 1`` samples."""
    n = spec.steps if steps is None else steps
    s = jnp.linspace(0.0, 1.0, n + 1)[:, None]
    ee = state.ee[None, :] + s * (g - state.ee)[None, :]
    end = phase_end(state, z, g, spec)
    width = state.width + s[:, 0] * (end.width - state.width)
    cubes = state.cubes[None] + state.hold[None, :, None] * (ee - state.ee)[:, None, :]
    return ee, width, cubes


class PickPlace(Domain):
    name = "pickplace"

    def __init__(self, spec=None):
        self.spec = s = spec or PickPlaceSpec()
        self.space = ActionSpace(6, s.K, s.u_bound, ACTIONS)
        self.layout = Layout.of(*[(f"a{k + 1}", 6) for k in range(s.K)],
                                *[(f"g{k + 1}", 2) for k in range(s.K)],
                                relaxed=tuple(f"a{k + 1}" for k in range(s.K)))
        self.kernel = kern.KernelSpec("pusher_composite", dict(s.bandwidths), dict(s.kernel_weights),
                                      K=s.K, m=6, angular=False)
        self.solved_threshold = s.solved_threshold

    @classmethod
    def from_config(cls, cfg):
        return cls(PickPlaceSpec.from_config(cfg))

    def split(self, theta):
        theta = jnp.asarray(theta)
        if theta.shape[-1] != self.layout.size:
            raise DimensionError(f"pickplace particle must have {self.layout.size} entries")
        K = self.spec.K
        return theta[:6 * K].reshape(K, 6), theta[6 * K:8 * K].reshape(K, 2)

    def relaxed(self, a):
        return dc.softmax(a / self.spec.temperature, axis=-1)

    # -- costs ----------------------------------------------------------------
    def phase_costs(self, theta, z=None):
        """Per-phase costs ``C_k = z_k . L(x) + L_target`` and the visited states."""
        a, g = self.split(theta)
        z = self.relaxed(a) if z is None else z
        state = initial_state(self.spec)
        states, costs = [state], []
        for k in range(self.spec.K):
            nxt = phase_end(state, z[k], g[k], self.spec)
            costs.append(z[k] @ action_losses(state, nxt, g[k], self.spec) + target_loss(state, nxt, self.spec))
            states.append(nxt)
            state = nxt
        return jnp.stack(costs), states

    def cost(self, theta):
        return jnp.sum(self.phase_costs(theta)[0])

    def plan_cost(self, theta):
        a, _ = self.split(theta)
        return jnp.sum(self.phase_costs(theta, z=jax.nn.one_hot(jnp.argmax(a, axis=-1), 6))[0])

    def stage_cost(self, theta, k, z=None):
        """Cost of phase ``k`` with earlier phases frozen at their discrete plan.

        ``z`` optionally overrides the relaxed action weights (``(K, 6)``; only
        row ``k`` is used).
        """
        a, g = self.split(theta)
        state = initial_state(self.spec)
        for j in range(k):
            hard = jax.nn.one_hot(jnp.argmax(a[j]), 6)
            state = jax.tree_util.tree_map(stop, phase_end(state, hard, stop(g[j]), self.spec))
        zk = self.relaxed(a[k]) if z is None else z[k]
        nxt = phase_end(state, zk, g[k], self.spec)
        return zk @ action_losses(state, nxt, g[k], self.spec) + target_loss(state, nxt, self.spec)

    def _feature_fn(self):
        K, temp = self.spec.K, self.spec.temperature
        return lambda theta: kern.pusher_features(theta, K, 6, temp, angular=False)

    def features(self, theta):
        return np.asarray(self._feature_fn()(jnp.asarray(theta)))

    def init_bounds(self):
        s = self.spec
        lo = np.concatenate([np.full(6 * s.K, -s.init_spread), np.tile(s.init_low, s.K)])
        hi = np.concatenate([np.full(6 * s.K, s.init_spread), np.tile(s.init_high, s.K)])
        return lo, hi

    def bounds(self):
        s = self.spec
        lo = np.concatenate([np.full(6 * s.K, -s.u_bound), np.tile(s.goal_low, s.K)])
        hi = np.concatenate([np.full(6 * s.K, s.u_bound), np.tile(s.goal_high, s.K)])
        return lo, hi

    def stage_model(self, k):
        s = self.spec
        mask = np.zeros(self.layout.size)
        mask[6 * k:6 * (k + 1)] = 1.0
        mask[6 * s.K + 2 * k:6 * s.K + 2 * (k + 1)] = 1.0

        def logp(theta):
            return -self.stage_cost(theta, k)

        def plan_logp(z, theta):
            return -self.stage_cost(theta, k, z=z)

        temp = s.temperature

        def feats(theta):
            a, g = self.split(theta)
            return jnp.concatenate([g[k], dc.softmax(a[k] / temp)])

        return PosteriorModel(dc.Program(logp, self.layout.size, name=f"pickplace_stage{k + 1}"),
                              features=feats, discrete_log_prob=plan_logp,
                              relaxed_log_prob=plan_logp, action_space=self.space,
                              relaxed_slice=slice(0, 6 * s.K), update_mask=mask, bounds=self.bounds(),
                              name=f"pickplace_stage{k + 1}")

    def stages(self):
        s = self.spec
        kernel = kern.KernelSpec("pusher_composite", dict(s.bandwidths), dict(s.kernel_weights),
                                 K=1, m=6, angular=False)
        return [Stage(f"phase{k + 1}", self.stage_model(k), lambda th, k=k: self.stage_cost(th, k), kernel)
                for k in range(s.K)]

    # -- reporting ------------------------------------------------------------
    def _hard(self, theta):
        if not hasattr(self, "_hard_fn"):
            def f(th):
                a, _ = self.split(th)
                z = jax.nn.one_hot(jnp.argmax(a, axis=-1), 6)
                costs, states = self.phase_costs(th, z=z)
                return costs, states[-1].cubes
            self._hard_fn = jax.jit(f)
        costs, cubes = self._hard_fn(jnp.asarray(theta, dtype=jnp.float64))
        return np.asarray(costs), np.asarray(cubes)

    def plan(self, theta):
        return self.space.render(self.space.plan_indices(np.asarray(theta)[:self.space.dim]))

    def goal_reached(self, cubes):
        """cube1 within a quarter cube of an empty target, resting on the ground."""
        s = self.spec
        tol = (0.25 * s.cube_size) ** 2
        for t, blocker in ((s.target_a, 1), (s.target_b, 2)):
            t = np.asarray(t)
            if np.sum((cubes[0] - t) ** 2) < tol and np.sum((cubes[blocker] - t) ** 2) > s.clear_radius ** 2:
                return True
        return False

    def diagnostics(self, theta):
        costs, cubes = self._hard(theta)
        return {"stage_costs": costs.tolist(), "cubes_final": cubes.tolist(),
                "goal_reached": self.goal_reached(cubes)}

    def solved(self, theta, cost=None):
        """Every stage of the discrete plan is under threshold and cube1 sits in a free target."""
        costs, cubes = self._hard(theta)
        return bool(np.all(costs < self.solved_threshold) and self.goal_reached(cubes))

    def family(self, theta):
        """Which blocker a solved plan clears: ``"A"`` (cube2) or ``"B"`` (cube3), else None."""
        if not self.solved(theta):
            return None
        cubes = self._hard(theta)[1]
        return "A" if np.sum((cubes[0] - np.asarray(self.spec.target_a)) ** 2) < 0.1 else "B"
