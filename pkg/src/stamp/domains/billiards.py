"""Billiards: choose the cue ball's initial velocity to pocket the target ball.

Particles are ``theta = [vx, vy]``. Which walls the cue ball bounces off
before touching the target is not a separate variable; it is read off the
simulated trajectory as a soft indicator per wall and used by the kernel to
spread particles across wall-hit modes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from .. import diffcore as dc
from .. import kernels as kern
from .. import physsim as ps
from ..errors import DimensionError, ParameterError
from ..svgd import Layout
from .base import Domain, softmin_weights, stop


@dataclass(frozen=True)
class BilliardsSpec:
    table: tuple = (0.0, 0.0, 1.0, 2.0)  # x0, y0, x1, y1; walls 1..4 = left, top, right, bottom
    radius: float = 0.05
    mass: float = 0.05
    damping: float = 0.8  # rolling resistance, 1/s
    cue: tuple = (0.3, 0.4)
    target: tuple = (0.5, 1.0)
    pocket_top: tuple = (0.85, 1.85)
    pocket_bottom: tuple = (0.85, 0.15)
    pocket_radius: float = 0.08
    beta_aim: float = 1.0
    beta_target: float = 1.0
    alpha_ind: float = 50.0
    beta_ind: float = 5.0
    aim_temperature: float = 1e-4
    horizon: int = 1200
    dt: float = 1.0 / 480.0
    stiffness: float = 1e4
    contact_damping: float = 1.0
    pocket_stiffness: float = 400.0
    pocket_damping: float = 40.0
    init_speed: float = 3.0
    max_speed: float = 4.0  # per-axis bound on the particles during inference
    bandwidths: dict = field(default_factory=lambda: {"s_v": None, "s_z": None})

    def __post_init__(self):
        for name in ("radius", "mass", "beta_aim", "beta_target", "alpha_ind", "aim_temperature",
                     "pocket_radius", "dt"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"billiards: {name} must be positive")
        if self.beta_aim <= 0 or self.beta_target <= 0:
            raise ParameterError("billiards: loss weights must be positive")
        x0, y0, x1, y1 = self.table
        for p in (self.pocket_top, self.pocket_bottom, self.cue, self.target):
            if not (x0 < p[0] < x1 and y0 < p[1] < y1):
                raise ParameterError(f"billiards: point {p} is off the table")
        if self.horizon < 2:
            raise ParameterError("billiards: horizon must be >= 2")

    @classmethod
    def from_config(cls, cfg):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(cfg) - known
        if unknown:
            raise ParameterError(f"billiards: unknown keys {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items()}
        return cls(**kw)


def wall_indicator(signed_dist, t_c, alpha=50.0, beta=5.0):
    """Soft wall-hit indicators ``z`` in (0, 1), one per wall.

    ``signed_dist`` is ``(T, n_walls)``: the cue ball's surface gap to each
    wall per step (row 0 is the initial state and is not counted). Steps
    ``1..t_c`` contribute with softmax weights of ``d = -alpha * SD + beta``.
    """
    signed_dist = jnp.asarray(signed_dist)
    if signed_dist.ndim != 2 or signed_dist.shape[0] < 2:
        raise DimensionError("wall indicator needs a (steps, walls) array with at least one step")
    steps = jnp.arange(signed_dist.shape[0])
    mask = (steps >= 1) & (steps <= t_c)
    d = -alpha * signed_dist + beta
    logits = jnp.where(mask[:, None], d, -jnp.inf)
    w = dc.softmax(logits, axis=0)
    weighted = jnp.sum(jnp.where(mask[:, None], w * d, 0.0), axis=0)
    return dc.sigmoid(weighted)


def contact_step(gaps):
    """First step index with a non-positive gap, else the last index."""
    gaps = np.asarray(gaps)
    hit = np.flatnonzero(gaps[1:] <= 0)
    return int(hit[0]) + 1 if hit.size else len(gaps) - 1


def _contact_step_jnp(gaps):
    n = gaps.shape[0]
    steps = jnp.arange(n)
    hit = (gaps <= 0) & (steps >= 1)
    return stop(jnp.where(jnp.any(hit), jnp.argmax(hit), n - 1))


def aim_loss(gaps, t_c, temperature=1e-4):
    """Softmin-weighted surface gap over steps ``1..t_c``."""
    steps = jnp.arange(gaps.shape[0])
    mask = (steps >= 1) & (steps <= t_c)
    per_step = dc.relu(gaps)
    w = softmin_weights(per_step, temperature, mask)
    return jnp.sum(jnp.where(mask, w * per_step, 0.0))


class Billiards(Domain):
    name = "billiards"

    def __init__(self, spec=None):
        self.spec = spec or BilliardsSpec()
        s = self.spec
        walls = ps.table_walls(*s.table, labels=("1", "2", "3", "4"))
        balls = (ps.Disc(s.radius, s.mass, s.damping, "cue", pocketable=False), ps.Disc(s.radius, s.mass, s.damping, "target"))
        pockets = (ps.Pocket(s.pocket_top, s.pocket_radius, "top"),
                   ps.Pocket(s.pocket_bottom, s.pocket_radius, "bottom"))
        self.world = ps.World(balls, walls, pockets, stiffness=s.stiffness,
                              contact_damping=s.contact_damping, dt=s.dt, substeps=1,
                              pocket_stiffness=s.pocket_stiffness, pocket_damping=s.pocket_damping)
        self.layout = Layout.of(("u0", 2))
        self.kernel = kern.KernelSpec("billiards_composite", dict(s.bandwidths))
        self.solved_threshold = (0.5 * s.pocket_radius) ** 2
        self._wn = jnp.array([w.normal for w in walls])
        self._wo = jnp.array([w.offset for w in walls])

    @classmethod
    def from_config(cls, cfg):
        return cls(BilliardsSpec.from_config(cfg))

    # -- simulation ---------------------------------------------------------
    def initial_state(self, u0):
        s = self.spec
        return ps.make_state(self.world, disc_pos=jnp.array([s.cue, s.target], dtype=jnp.float64),
                             disc_vel=jnp.stack([jnp.asarray(u0, dtype=jnp.float64), jnp.zeros(2)]))

    def simulate(self, u0):
        return ps.rollout(self.world, self.initial_state(u0), self.spec.horizon)

    def _parts(self, u0):
        s = self.spec
        traj = self.simulate(u0)
        pos = traj.states.disc_pos  # (H+1, 2, 2)
        cue, tgt = pos[:, 0], pos[:, 1]
        gaps = dc.safe_norm(tgt - cue) - 2 * s.radius
        t_c = _contact_step_jnp(gaps)
        sd = cue @ self._wn.T - self._wo[None, :] - s.radius
        z = wall_indicator(sd, t_c, s.alpha_ind, s.beta_ind)
        l_aim = aim_loss(gaps, t_c, s.aim_temperature)
        final = tgt[-1]
        l_target = dc.minimum(jnp.sum((final - jnp.asarray(s.pocket_top)) ** 2),
                              jnp.sum((final - jnp.asarray(s.pocket_bottom)) ** 2))
        return {"z": z, "aim": l_aim, "target": l_target, "t_c": t_c, "gaps": gaps, "traj": traj}

    def cost(self, theta):
        p = self._parts(theta[:2])
        return self.spec.beta_aim * p["aim"] + self.spec.beta_target * p["target"]

    def indicators(self, theta):
        return self._parts(theta[:2])["z"]

    def _feature_fn(self):
        return lambda theta: kern.billiards_features(theta[:2], self.indicators(theta))

    def features(self, theta):
        return np.asarray(self._feature_fn()(jnp.asarray(theta)))

    def init_bounds(self):
        v = self.spec.init_speed
        return np.array([-v, -v]), np.array([v, v])

    def bounds(self):
        v = self.spec.max_speed
        return np.array([-v, -v]), np.array([v, v])

    # -- reporting ----------------------------------------------------------
    def _report(self, theta):
        if not hasattr(self, "_report_fn"):
            def rep(th):
                p = self._parts(th[:2])
                return p["z"], p["aim"], p["target"], p["t_c"], jnp.min(p["gaps"][1:])
            self._report_fn = jax.jit(rep)
        z, aim, target, t_c, min_gap = self._report_fn(jnp.asarray(theta, dtype=jnp.float64))
        return np.asarray(z), float(aim), float(target), int(t_c), float(min_gap)

    def plan(self, theta):
        z = self._report(theta)[0]
        hits = [str(i + 1) for i in range(4) if z[i] > 0.5]
        return "W" + "".join(hits) if hits else "direct"

    def diagnostics(self, theta):
        z, aim, target, t_c, min_gap = self._report(theta)
        return {"L_aim": aim, "L_target": target, "contact": bool(min_gap <= 0), "t_c": t_c,
                "z": [float(v) for v in z]}

    def solved(self, theta, cost=None):
        z, aim, target, t_c, min_gap = self._report(theta)
        return bool(min_gap <= 0 and target < self.solved_threshold)

    def topology(self, theta):
        traj = self.simulate(jnp.asarray(theta[:2], dtype=jnp.float64))
        pos = np.asarray(traj.states.disc_pos)
        s = self.spec
        gaps = np.linalg.norm(pos[:, 1] - pos[:, 0], axis=-1) - 2 * s.radius
        wn, wo = np.asarray(self._wn), np.asarray(self._wo)
        wall = (pos @ wn.T - wo - s.radius) < 0  # (H+1, 2, 4)
        return (contact_step(gaps), int(np.sum(gaps < 0)), tuple(wall.sum(axis=0).ravel().tolist()))
