"""Differentiable planar rigid-body simulation.

Discs and boxes on a table, axis-aligned walls, pockets and an optional
kinematic gripper. Integration is semi-implicit Euler (velocity first, then
position) with spring-penalty contacts::

    f_n = k_n * max(0, -gap) - c_n * v_n      (only while gap < 0)

Table friction is linear velocity damping. Everything is written in
``jax.numpy`` so rollouts can be differentiated end to end; units are
meters, kilograms and seconds.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from . import diffcore as dc
from .errors import DimensionError, ParameterError, SimulationError, UnknownIdError


@dataclass(frozen=True)
class Disc:
    radius: float
    mass: float
    damping: float = 0.0  # 1/s, velocity-proportional table friction
    name: str = "disc"
    pocketable: bool = True  # feels the pocket well (when the world has one)


@dataclass(frozen=True)
class Box:
    half_extents: tuple
    mass: float
    damping: float = 0.0
    angular_damping: float = 0.0
    name: str = "box"

    @property
    def inertia(self):
        hx, hy = self.half_extents
        return self.mass * ((2 * hx) ** 2 + (2 * hy) ** 2) / 12.0


@dataclass(frozen=True)
class Wall:
    """Half-plane boundary ``normal . x >= offset`` (normal points inward)."""

    normal: tuple
    offset: float
    label: str = ""


@dataclass(frozen=True)
class Pocket:
    center: tuple
    radius: float
    label: str = ""


@dataclass(frozen=True)
class World:
    bodies: tuple = ()
    walls: tuple = ()
    pockets: tuple = ()
    stiffness: float = 1e4  # k_n, N/m
    contact_damping: float = 10.0  # c_n, N s/m
    dt: float = 1.0 / 480.0
    substeps: int = 8
    gripper: bool = False
    disc_collisions: bool = True
    # optional pocket well: inside a pocket's capture radius a disc feels
    # -m * (k_w * (x - center) + c_w * v); zero gains leave pockets passive
    pocket_stiffness: float = 0.0  # k_w, 1/s^2
    pocket_damping: float = 0.0  # c_w, 1/s

    def __post_init__(self):
        if not (self.stiffness > 0 and self.dt > 0 and self.substeps >= 1):
            raise ParameterError("stiffness, dt and substeps must be positive")
        for b in self.bodies:
            if b.mass <= 0:
                raise ParameterError(f"body {b.name!r}: mass must be positive")
            if isinstance(b, Disc) and b.radius <= 0:
                raise ParameterError(f"disc {b.name!r}: radius must be positive")

    @property
    def discs(self):
        return [b for b in self.bodies if isinstance(b, Disc)]

    @property
    def boxes(self):
        return [b for b in self.bodies if isinstance(b, Box)]

    def body_index(self, body):
        """Map a body id (index into ``bodies`` or a name) to (kind, local index)."""
        if isinstance(body, str):
            names = [b.name for b in self.bodies]
            if body not in names:
                raise UnknownIdError(f"unknown body {body!r}")
            body = names.index(body)
        if not 0 <= body < len(self.bodies):
            raise UnknownIdError(f"unknown body id {body}")
        target = self.bodies[body]
        kind = Disc if isinstance(target, Disc) else Box
        local = [i for i, b in enumerate(self.bodies) if isinstance(b, kind)].index(body)
        return ("disc" if kind is Disc else "box"), local

    def wall_index(self, wall):
        if isinstance(wall, str):
            labels = [w.label for w in self.walls]
            if wall not in labels:
                raise UnknownIdError(f"unknown wall {wall!r}")
            return labels.index(wall)
        if not 0 <= wall < len(self.walls):
            raise UnknownIdError(f"unknown wall id {wall}")
        return wall

    @property
    def control_dt(self):
        return self.dt * self.substeps


class SimState(NamedTuple):
    disc_pos: jnp.ndarray  # (nd, 2)
    disc_vel: jnp.ndarray  # (nd, 2)
    box_pos: jnp.ndarray  # (nb, 2)
    box_vel: jnp.ndarray  # (nb, 2)
    box_yaw: jnp.ndarray  # (nb,)
    box_omega: jnp.ndarray  # (nb,)
    gripper_pos: jnp.ndarray  # (2,)
    gripper_aperture: jnp.ndarray  # ()
    t: jnp.ndarray  # () integer time index


def make_state(world, disc_pos=None, disc_vel=None, box_pos=None, box_vel=None,
               box_yaw=None, box_omega=None, gripper_pos=(0.0, 0.0),
               gripper_aperture=1.0):
    nd, nb = len(world.discs), len(world.boxes)

    def arr(v, shape):
        if v is None:
            return jnp.zeros(shape)
        a = jnp.asarray(v, dtype=jnp.float64)
        if a.shape != shape:
            raise DimensionError(f"expected shape {shape}, got {a.shape}")
        return a

    return SimState(
        arr(disc_pos, (nd, 2)), arr(disc_vel, (nd, 2)),
        arr(box_pos, (nb, 2)), arr(box_vel, (nb, 2)),
        arr(box_yaw, (nb,)), arr(box_omega, (nb,)),
        arr(gripper_pos, (2,)), jnp.asarray(gripper_aperture, dtype=jnp.float64),
        jnp.asarray(0, dtype=jnp.int32))


class _Arrays:
    """Static per-world constants as arrays."""

    def __init__(self, world):
        discs, boxes = world.discs, world.boxes
        self.r = jnp.array([d.radius for d in discs], dtype=jnp.float64)
        self.m = jnp.array([d.mass for d in discs], dtype=jnp.float64)
        self.mu = jnp.array([d.damping for d in discs], dtype=jnp.float64)
        self.bh = jnp.array([b.half_extents for b in boxes], dtype=jnp.float64).reshape(-1, 2)
        self.bm = jnp.array([b.mass for b in boxes], dtype=jnp.float64)
        self.bI = jnp.array([b.inertia for b in boxes], dtype=jnp.float64)
        self.bmu = jnp.array([b.damping for b in boxes], dtype=jnp.float64)
        self.bmu_ang = jnp.array([b.angular_damping for b in boxes], dtype=jnp.float64)
        self.wn = jnp.array([w.normal for w in world.walls], dtype=jnp.float64).reshape(-1, 2)
        self.wo = jnp.array([w.offset for w in world.walls], dtype=jnp.float64)
        self.pocketable = jnp.array([d.pocketable for d in discs], dtype=bool)
        self.pc = jnp.array([p.center for p in world.pockets], dtype=jnp.float64).reshape(-1, 2)
        self.pr = jnp.array([p.radius for p in world.pockets], dtype=jnp.float64)
        nd = len(discs)
        iu = np.triu_indices(nd, k=1)
        self.pair_i = jnp.asarray(iu[0], dtype=jnp.int32)
        self.pair_j = jnp.asarray(iu[1], dtype=jnp.int32)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _rot(yaw):
    c, s = jnp.cos(yaw), jnp.sin(yaw)
    return jnp.stack([jnp.stack([c, -s], -1), jnp.stack([s, c], -1)], -2)


def _penalty(gap, vn, k, c):
    """Normal force magnitude for a spring-damper contact (0 when separated)."""
    return dc.select(gap < 0.0, -k * gap - c * vn, jnp.zeros_like(gap))


def box_disc_geometry(center, yaw, half, p):
    """Signed gap of point ``p`` to an oriented box, outward normal (world frame).

    Returns ``(sdf, normal)`` where ``sdf`` is negative inside the box.
    """
    R = _rot(yaw)
    q = R.T @ (p - center)
    d = jnp.abs(q) - half
    outside = jnp.maximum(d, 0.0)
    out_len = dc.safe_norm(outside)
    inside_val = jnp.minimum(jnp.max(d), 0.0)
    any_out = jnp.any(d > 0.0)
    sdf = jnp.where(any_out, out_len, inside_val)
    sgn = jnp.where(q >= 0.0, 1.0, -1.0)
    n_out = outside * sgn / out_len
    axis_x = d[0] >= d[1]
    n_in = jnp.where(axis_x, jnp.array([1.0, 0.0]) * sgn, jnp.array([0.0, 1.0]) * sgn)
    n_local = jnp.where(any_out, n_out, n_in)
    return sdf, R @ n_local


def step(world, state, u=None, pair_scale=None, arrays=None):
    """Advance one ``dt`` with semi-implicit Euler.

    ``u`` is an ``(nd, 2)`` array of applied forces on the discs.
    ``pair_scale`` optionally scales, per (box, disc) pair, the contact force
    transmitted to the box (the disc always feels the full reaction).
    """
    A = arrays if arrays is not None else _Arrays(world)
    k, c = world.stiffness, world.contact_damping
    nd, nb = A.r.shape[0], A.bm.shape[0]
    x, v = state.disc_pos, state.disc_vel
    bx, bv, byaw, bw = state.box_pos, state.box_vel, state.box_yaw, state.box_omega

    F = jnp.zeros((nd, 2)) if u is None else jnp.asarray(u)
    bF = jnp.zeros((nb, 2))
    bT = jnp.zeros((nb,))

    if nd:
        F = F - (A.mu * A.m)[:, None] * v
        if A.wn.shape[0]:
            sd = x @ A.wn.T - A.wo[None, :] - A.r[:, None]  # (nd, nw)
            vn = v @ A.wn.T
            f = _penalty(sd, vn, k, c)
            F = F + f @ A.wn
        if A.pc.shape[0] and (world.pocket_stiffness > 0 or world.pocket_damping > 0):
            off = x[:, None, :] - A.pc[None, :, :]  # (nd, np, 2)
            inside = (jnp.sum(off * off, axis=-1) < A.pr[None, :] ** 2) & A.pocketable[:, None]
            pull = -(world.pocket_stiffness * off + world.pocket_damping * v[:, None, :])
            F = F + A.m[:, None] * jnp.sum(dc.select(inside[..., None], pull, 0.0), axis=1)
        if nd > 1 and world.disc_collisions:
            i, j = A.pair_i, A.pair_j
            d = x[i] - x[j]
            dist = dc.safe_norm(d)
            n = d / dist[:, None]
            gap = dist - A.r[i] - A.r[j]
            vn = jnp.sum((v[i] - v[j]) * n, axis=-1)
            f = _penalty(gap, vn, k, c)[:, None] * n
            F = F.at[i].add(f).at[j].add(-f)

    if nb:
        bF = bF - (A.bmu * A.bm)[:, None] * bv
        bT = bT - A.bmu_ang * A.bI * bw
        if A.wn.shape[0]:
            signs = jnp.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=jnp.float64)
            R = _rot(byaw)  # (nb, 2, 2)
            offs = jnp.einsum("bij,cj->bci", R, signs[None] * A.bh[:, None, :])  # (nb,4,2)
            corners = bx[:, None, :] + offs
            cv = bv[:, None, :] + jnp.stack(
                [-bw[:, None] * offs[..., 1], bw[:, None] * offs[..., 0]], -1)
            sd = jnp.einsum("bci,wi->bcw", corners, A.wn) - A.wo
            vn = jnp.einsum("bci,wi->bcw", cv, A.wn)
            f = _penalty(sd, vn, k, c)  # (nb,4,nw)
            force = jnp.einsum("bcw,wi->bci", f, A.wn)
            bF = bF + force.sum(axis=1)
            bT = bT + _cross(offs, force).sum(axis=1)
        if nd:
            scale = jnp.ones((nb, nd)) if pair_scale is None else jnp.asarray(pair_scale)
            geo = jax.vmap(jax.vmap(box_disc_geometry, (None, None, None, 0)), (0, 0, 0, None))
            sdf, n = geo(bx, byaw, A.bh, x)  # (nb,nd), (nb,nd,2)
            gap = sdf - A.r[None, :]
            rc = x[None, :, :] - n * (A.r[None, :, None] + 0.5 * gap[..., None]) - bx[:, None, :]
            vpoint = bv[:, None, :] + jnp.stack(
                [-bw[:, None] * rc[..., 1], bw[:, None] * rc[..., 0]], -1)
            vn = jnp.sum((v[None] - vpoint) * n, axis=-1)
            f = _penalty(gap, vn, k, c)[..., None] * n  # force on disc
            F = F + f.sum(axis=0)
            fb = -f * scale[..., None]
            bF = bF + fb.sum(axis=1)
            bT = bT + _cross(rc, fb).sum(axis=1)

    dt = world.dt
    v_new = v + dt * F / A.m[:, None] if nd else v
    x_new = x + dt * v_new
    bv_new = bv + dt * bF / A.bm[:, None] if nb else bv
    bx_new = bx + dt * bv_new
    bw_new = bw + dt * bT / A.bI if nb else bw
    byaw_new = byaw + dt * bw_new
    return state._replace(disc_pos=x_new, disc_vel=v_new, box_pos=bx_new, box_vel=bv_new,
                          box_yaw=byaw_new, box_omega=bw_new, t=state.t + 1)


def contact_forces(world, state, u=None, pair_scale=None):
    """Total per-disc force that :func:`step` would apply (diagnostics)."""
    A = _Arrays(world)
    nxt = step(world, state, u, pair_scale, A)
    return (nxt.disc_vel - state.disc_vel) * A.m[:, None] / world.dt


def signed_distance(world, state, body, wall):
    """Gap between a body's surface and a wall plane; negative iff penetrating."""
    kind, i = world.body_index(body)
    w = world.walls[world.wall_index(wall)]
    n = jnp.asarray(w.normal, dtype=jnp.float64)
    if kind == "disc":
        return jnp.dot(n, state.disc_pos[i]) - w.offset - world.discs[i].radius
    half = jnp.asarray(world.boxes[i].half_extents, dtype=jnp.float64)
    signs = jnp.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=jnp.float64)
    corners = state.box_pos[i] + (signs * half) @ _rot(state.box_yaw[i]).T
    return jnp.min(corners @ n) - w.offset


def in_pocket(world, state, body):
    """Label of the pocket whose capture radius contains the disc center, else ``None``."""
    kind, i = world.body_index(body)
    if kind != "disc":
        return None
    p = np.asarray(state.disc_pos[i])
    for pocket in world.pockets:
        if np.sum((p - np.asarray(pocket.center)) ** 2) < pocket.radius ** 2:
            return pocket.label
    return None


class Trajectory(NamedTuple):
    """Stacked :class:`SimState` fields with a leading time axis."""

    states: SimState
    controls: jnp.ndarray

    def __len__(self):
        return int(self.states.t.shape[0])

    def at(self, t):
        return jax.tree_util.tree_map(lambda a: a[t], self.states)


def _stack_initial(x0, rest):
    return jax.tree_util.tree_map(lambda a, b: jnp.concatenate([a[None], b], axis=0), x0, rest)


def rollout(world, x0, horizon, controls=None, controller=None, pair_scale=None):
    """Simulate ``horizon`` control steps of ``world.substeps`` integration steps.

    Exactly one of ``controls`` (``(horizon, nd, 2)`` forces) or
    ``controller(state, k) -> (nd, 2)`` may be given; with neither, no
    actuation is applied. Returns a :class:`Trajectory` of ``horizon + 1``
    states starting with ``x0`` and the applied controls.
    """
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    A = _Arrays(world)
    nd = A.r.shape[0]
    if controls is None:
        controls = jnp.zeros((horizon, nd, 2))
    controls = jnp.asarray(controls)
    if controls.shape[0] != horizon:
        raise DimensionError(f"expected {horizon} control steps, got {controls.shape[0]}")

    def body(state, inp):
        k, u_open = inp
        u = controller(state, k) if controller is not None else u_open
        for _ in range(world.substeps):
            state = step(world, state, u, pair_scale, A)
        return state, (state, u)

    last, (states, applied) = jax.lax.scan(
        body, x0, (jnp.arange(horizon), controls))
    return Trajectory(_stack_initial(x0, states), applied)


class RolloutResult(NamedTuple):
    trajectory: Trajectory
    loss: float
    grad_controls: np.ndarray
    grad_state: SimState


def rollout_with_gradient(world, x0, controls, loss):
    """Roll out and differentiate ``loss(trajectory)`` w.r.t. controls and ``x0``.

    ``loss`` maps a :class:`Trajectory` to a scalar. Raises
    :class:`SimulationError` naming the first body/time index with a
    non-finite state when the rollout blows up.
    """
    controls = jnp.asarray(controls, dtype=jnp.float64)
    horizon = controls.shape[0]

    def f(ctrl, state):
        traj = rollout(world, state, horizon, controls=ctrl)
        return loss(traj), traj

    (value, traj), (g_u, g_x) = jax.value_and_grad(f, argnums=(0, 1), has_aux=True, allow_int=True)(controls, x0)
    check_trajectory(world, traj)
    if not np.isfinite(float(value)):
        raise SimulationError("non-finite rollout loss", None, horizon)
    return RolloutResult(traj, float(value), np.asarray(g_u), g_x)


def contact_topology(world, traj):
    """Which contacts are active at each recorded step, as a hashable signature.

    For every disc pair, disc/wall, box/disc and box-corner/wall contact the
    signature holds the first step and the number of steps in penetration.
    Finite differences are only meaningful where this does not change.
    """
    A = _Arrays(world)
    s = traj.states
    x = np.asarray(s.disc_pos)
    r = np.asarray(A.r)
    wn, wo = np.asarray(A.wn), np.asarray(A.wo)
    active = []
    if x.shape[1]:
        i, j = np.asarray(A.pair_i), np.asarray(A.pair_j)
        if i.size:
            active.append(np.linalg.norm(x[:, i] - x[:, j], axis=-1) - r[i] - r[j] < 0)
        if wn.shape[0]:
            active.append((x @ wn.T - wo - r[None, :, None]).reshape(x.shape[0], -1) < 0)
    bx = np.asarray(s.box_pos)
    if bx.shape[1]:
        yaw = np.asarray(s.box_yaw)
        if x.shape[1]:
            geo = jax.vmap(jax.vmap(jax.vmap(box_disc_geometry, (None, None, None, 0)), (0, 0, 0, None)),
                           (0, 0, None, 0))
            sdf, _ = geo(s.box_pos, s.box_yaw, A.bh, s.disc_pos)
            active.append((np.asarray(sdf) - r[None, None, :]).reshape(x.shape[0], -1) < 0)
        if wn.shape[0]:
            signs = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.float64)
            c, sn = np.cos(yaw), np.sin(yaw)
            R = np.stack([np.stack([c, -sn], -1), np.stack([sn, c], -1)], -2)  # (T, nb, 2, 2)
            offs = np.einsum("tbij,bcj->tbci", R, signs[None] * np.asarray(A.bh)[:, None, :])
            corners = bx[:, :, None, :] + offs
            active.append((corners @ wn.T - wo).reshape(x.shape[0], -1) < 0)
    sig = []
    for block in active:
        for col in block.T:
            hits = np.flatnonzero(col)
            sig.append((int(hits[0]) if hits.size else -1, int(hits.size)))
    return tuple(sig)


def check_trajectory(world, traj):
    """Raise :class:`SimulationError` at the first non-finite body state."""
    s = traj.states
    for kind, pos, vel in (("disc", s.disc_pos, s.disc_vel), ("box", s.box_pos, s.box_vel)):
        if pos.shape[1] == 0:
            continue
        bad = ~(np.isfinite(np.asarray(pos)).all(-1) & np.isfinite(np.asarray(vel)).all(-1))
        if bad.any():
            t, b = np.argwhere(bad)[0]
            names = [x.name for x in (world.discs if kind == "disc" else world.boxes)]
            raise SimulationError(
                f"non-finite state of {kind} {names[b]!r} at time index {t}", names[b], int(t))


# -- scene description -----------------------------------------------------

def world_from_dict(spec):
    """Build ``(World, SimState)`` from a JSON-style scene description."""
    contact = spec.get("contact", {})
    bodies, disc_pos, disc_vel, box_pos, box_yaw = [], [], [], [], []
    for b in spec.get("bodies", []):
        if b["type"] == "disc":
            bodies.append(Disc(b["radius"], b["mass"], b.get("damping", 0.0), b.get("name", "disc"),
                               b.get("pocketable", True)))
            disc_pos.append(b["position"])
            disc_vel.append(b.get("velocity", [0.0, 0.0]))
        elif b["type"] == "box":
            bodies.append(Box(tuple(b["half_extents"]), b["mass"], b.get("damping", 0.0),
                              b.get("angular_damping", 0.0), b.get("name", "box")))
            box_pos.append(b["position"])
            box_yaw.append(b.get("yaw", 0.0))
        else:
            raise ParameterError(f"unknown body type {b['type']!r}")
    walls = []
    if "table" in spec:
        x0, y0, x1, y1 = spec["table"]
        walls = table_walls(x0, y0, x1, y1, tuple(spec.get("wall_labels", ("1", "2", "3", "4"))))
    pockets = tuple(Pocket(tuple(p["center"]), p["radius"], p.get("label", ""))
                    for p in spec.get("pockets", []))
    world = World(tuple(bodies), tuple(walls), pockets,
                  stiffness=contact.get("stiffness", 1e4),
                  contact_damping=contact.get("damping", 10.0),
                  dt=contact.get("dt", 1.0 / 480.0),
                  substeps=contact.get("substeps", 8),
                  pocket_stiffness=contact.get("pocket_stiffness", 0.0),
                  pocket_damping=contact.get("pocket_damping", 0.0),
                  gripper=spec.get("gripper", False))
    x0 = make_state(world,
                    disc_pos=np.array(disc_pos).reshape(-1, 2), disc_vel=np.array(disc_vel).reshape(-1, 2),
                    box_pos=np.array(box_pos).reshape(-1, 2), box_yaw=np.array(box_yaw).reshape(-1))
    return world, x0


def table_walls(x0, y0, x1, y1, labels=("1", "2", "3", "4")):
    """Inward-facing walls of the rectangle; labels go left, top, right, bottom."""
    return (Wall((1.0, 0.0), x0, labels[0]), Wall((0.0, -1.0), -y1, labels[1]),
            Wall((-1.0, 0.0), -x1, labels[2]), Wall((0.0, 1.0), y0, labels[3]))
