"""Goal-conditioned discrete movement primitives.

The transformation system, with scaled velocity ``v = tau * dx/dt``::

    tau * dv/dt = K (g - x) - D v - K (g - x0) s + K f(s)
    tau * dx/dt = v
    tau * ds/dt = -alpha s,   s(0) = 1

``f(s) = sum_i w_i psi_i(s) s / sum_i psi_i(s)`` with Gaussian bases
``psi_i(s) = exp(-h_i (s - c_i)^2)``. Fitting is ridge-regularized least
squares on the forcing term recovered from a demonstration. Rollouts are
``jax.numpy`` programs, so goals can be differentiated through.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from . import diffcore as dc  # noqa: F401  (float64)
from .errors import DimensionError, FitError, ParameterError

BANK_SCHEMA_VERSION = 1
RIDGE = 1e-8


def basis_centers(n, alpha):
    """Centers equally spaced in time, mapped through the phase decay."""
    return np.exp(-alpha * np.linspace(0.0, 1.0, n))


def basis_widths(centers):
    if len(centers) == 1:
        return np.ones(1)
    d = np.diff(centers) ** 2
    return 1.0 / np.append(d, d[-1])


@dataclass(frozen=True)
class DMPModel:
    weights: np.ndarray  # (N, dims)
    K: float = 100.0
    D: Optional[float] = None  # defaults to 2 sqrt(K)
    tau: float = 1.0
    alpha: float = 4.0
    centers: Optional[np.ndarray] = None
    widths: Optional[np.ndarray] = None
    residual: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, ndmin=2)
        if w.shape[0] < 1:
            raise ParameterError("need at least one basis function")
        if not (self.K > 0 and self.tau > 0 and self.alpha > 0):
            raise ParameterError("K, tau and alpha must be positive")
        object.__setattr__(self, "weights", w)
        if self.D is None:
            object.__setattr__(self, "D", 2.0 * float(np.sqrt(self.K)))
        if self.centers is None:
            object.__setattr__(self, "centers", basis_centers(w.shape[0], self.alpha))
        if self.widths is None:
            object.__setattr__(self, "widths", basis_widths(self.centers))
        if len(self.centers) != w.shape[0] or len(self.widths) != w.shape[0]:
            raise DimensionError("centers/widths must match the number of weights")

    @property
    def n_basis(self):
        return self.weights.shape[0]

    @property
    def dims(self):
        return self.weights.shape[1]

    @classmethod
    def zero(cls, dims, n_basis=10, **kw):
        return cls(np.zeros((n_basis, dims)), **kw)

    def features(self, s):
        """Normalized, phase-gated basis activations, shape ``(..., N)``."""
        s = jnp.asarray(s)[..., None]
        psi = jnp.exp(-jnp.asarray(self.widths) * (s - jnp.asarray(self.centers)) ** 2)
        return psi * s / (jnp.sum(psi, axis=-1, keepdims=True) + 1e-300)

    def forcing(self, s, weights=None):
        w = self.weights if weights is None else weights
        return self.features(s) @ jnp.asarray(w)

    def settle_steps(self, dt):
        """Steps needed to reach time ``10 tau / alpha``."""
        return int(np.ceil(10.0 * self.tau / self.alpha / dt))

    def to_dict(self):
        return {"K": self.K, "D": self.D, "tau": self.tau, "alpha": self.alpha,
                "centers": np.asarray(self.centers).tolist(),
                "widths": np.asarray(self.widths).tolist(),
                "weights": self.weights.tolist(), "residual": self.residual}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"]), d["K"], d["D"], d["tau"], d["alpha"],
                   np.asarray(d["centers"]), np.asarray(d["widths"]), d.get("residual", 0.0))


@dataclass
class Demonstration:
    """Positions, velocities and accelerations (physical units) on a uniform grid."""

    positions: np.ndarray  # (T, dims)
    velocities: np.ndarray
    accelerations: np.ndarray
    dt: float
    goal: Optional[np.ndarray] = None  # defaults to the last position

    def __post_init__(self):
        self.positions = _as2d(self.positions)
        self.velocities = _as2d(self.velocities)
        self.accelerations = _as2d(self.accelerations)
        if not (self.positions.shape == self.velocities.shape == self.accelerations.shape):
            raise DimensionError("positions, velocities and accelerations must have equal shapes")
        if self.positions.shape[0] < 2:
            raise DimensionError("a demonstration needs at least two samples")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        for arr in (self.positions, self.velocities, self.accelerations):
            if not np.all(np.isfinite(arr)):
                raise ParameterError("demonstration contains non-finite values")

    @classmethod
    def from_positions(cls, positions, dt):
        x = _as2d(positions)
        v = np.gradient(x, dt, axis=0)
        a = np.gradient(v, dt, axis=0)
        return cls(x, v, a, dt)

    @property
    def path_length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.positions, axis=0), axis=1)))


def _as2d(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def minimum_jerk(x0, g, duration, dt):
    """Minimum-jerk point-to-point demonstration (analytic derivatives)."""
    x0, g = np.atleast_1d(np.asarray(x0, float)), np.atleast_1d(np.asarray(g, float))
    t = np.arange(0.0, duration + 0.5 * dt, dt)
    r = (t / duration)[:, None]
    d = (g - x0)[None, :]
    pos = x0 + d * (10 * r**3 - 15 * r**4 + 6 * r**5)
    vel = d * (30 * r**2 - 60 * r**3 + 30 * r**4) / duration
    acc = d * (60 * r - 180 * r**2 + 120 * r**3) / duration**2
    return Demonstration(pos, vel, acc, dt)


def fit(demos, n_basis=10, tau=1.0, alpha=4.0, K=100.0, D=None, ridge=RIDGE):
    """Least-squares forcing weights from one or more demonstrations.

    The demonstration time axis is assumed to run at the model's ``tau``
    (phase ``s = exp(-alpha t / tau)``).
    """
    if isinstance(demos, Demonstration):
        demos = [demos]
    if not demos:
        raise FitError("need at least one demonstration")
    if n_basis < 1:
        raise ParameterError("need at least one basis function")
    proto = DMPModel(np.zeros((n_basis, demos[0].positions.shape[1])), K, D, tau, alpha)
    D = proto.D
    rows, targets = [], []
    for demo in demos:
        if demo.positions.shape[1] != proto.dims:
            raise DimensionError("demonstrations have different dimensionality")
        x = demo.positions
        x0 = x[0]
        g = x[-1] if demo.goal is None else np.asarray(demo.goal, float)
        s = np.exp(-alpha * np.arange(len(x)) * demo.dt / tau)
        v = tau * demo.velocities
        vdot = tau * demo.accelerations
        f = (tau * vdot + D * v + K * (x - g) + K * (g - x0) * s[:, None]) / K
        rows.append(np.asarray(proto.features(s)))
        targets.append(f)
    Phi = np.concatenate(rows)
    F = np.concatenate(targets)
    A = Phi.T @ Phi
    A = A + ridge * np.eye(n_basis)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise FitError(f"normal equations are singular (condition {cond:.3g}); use fewer bases")
    W = np.linalg.solve(A, Phi.T @ F)
    resid = float(np.sqrt(np.mean((Phi @ W - F) ** 2)))
    return DMPModel(W, K, D, tau, alpha, proto.centers, proto.widths, resid)


class DMPTrajectory(NamedTuple):
    positions: jnp.ndarray  # (horizon + 1, dims)
    velocities: jnp.ndarray  # physical dx/dt
    accelerations: jnp.ndarray
    phase: jnp.ndarray


def rollout(model, x0, g, horizon, dt, weights=None):
    """Integrate the primitive for ``horizon`` steps with semi-implicit Euler.

    The phase is advanced with its exact exponential decay. Goals and start
    may be traced values, so the result is differentiable in ``g``.
    Velocities and accelerations are returned in physical units. ``weights``
    overrides the model's forcing weights (useful under ``vmap``).
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    x0 = jnp.atleast_1d(jnp.asarray(x0, dtype=jnp.float64))
    g = jnp.atleast_1d(jnp.asarray(g, dtype=jnp.float64))
    if x0.shape != (model.dims,) or g.shape != (model.dims,):
        raise DimensionError(f"start and goal must have {model.dims} entries")
    K, D, tau = model.K, model.D, model.tau
    decay = float(np.exp(-model.alpha * dt / tau))

    def accel(x, v, s):
        return (K * (g - x) - D * v - K * (g - x0) * s + K * model.forcing(s, weights)) / tau

    def body(carry, _):
        x, v, s = carry
        vdot = accel(x, v, s)
        v = v + dt * vdot
        x = x + dt * v / tau
        s = s * decay
        return (x, v, s), (x, v, s, vdot)

    v0 = jnp.zeros_like(x0)
    s0 = jnp.asarray(1.0)
    (xl, vl, sl), (xs, vs, ss, vdots) = jax.lax.scan(body, (x0, v0, s0), None, length=horizon)
    xs = jnp.concatenate([x0[None], xs])
    vs = jnp.concatenate([v0[None], vs])
    ss = jnp.concatenate([s0[None], ss])
    acc_last = accel(xl, vl, sl)
    vdots = jnp.concatenate([vdots, acc_last[None]])
    return DMPTrajectory(xs, vs / tau, vdots / tau, ss)


def to_demonstration(traj, dt, goal=None):
    """Package a rollout as a demonstration (for round-trip fitting)."""
    return Demonstration(np.asarray(traj.positions), np.asarray(traj.velocities),
                         np.asarray(traj.accelerations), dt,
                         None if goal is None else np.asarray(goal))


# -- tracking ---------------------------------------------------------------

DEFAULT_GAINS = (400.0, 40.0)


class Reference(NamedTuple):
    """Reference positions/velocities per control step for tracked discs."""

    positions: jnp.ndarray  # (T + 1, n_tracked, 2)
    velocities: jnp.ndarray
    bodies: tuple  # disc indices (local to world.discs)


def tracking_control(reference, state, k, gains=DEFAULT_GAINS, n_discs=None):
    """PD force ``k_p (x_ref - x) + k_d (v_ref - v)`` for the tracked discs at step ``k``."""
    kp, kd = gains
    if not (kp > 0 and kd > 0):
        raise ParameterError("tracking gains must be positive")
    idx = jnp.asarray(reference.bodies)
    n = state.disc_pos.shape[0] if n_discs is None else n_discs
    k = jnp.minimum(k, reference.positions.shape[0] - 1)
    err_x = reference.positions[k] - state.disc_pos[idx]
    err_v = reference.velocities[k] - state.disc_vel[idx]
    return jnp.zeros((n, 2)).at[idx].set(kp * err_x + kd * err_v)


def tracking_controller(reference, gains=DEFAULT_GAINS):
    return lambda state, k: tracking_control(reference, state, k, gains)


def tracking_controls(reference, world, x0, gains=DEFAULT_GAINS, pair_scale=None):
    """Closed-loop rollout tracking ``reference``; returns the simulated trajectory.

    The applied control sequence is ``trajectory.controls``.
    """
    from . import physsim

    horizon = reference.positions.shape[0] - 1
    return physsim.rollout(world, x0, horizon, controller=tracking_controller(reference, gains),
                           pair_scale=pair_scale)


# -- bank persistence --------------------------------------------------------

@dataclass
class DMPBank:
    models: dict = field(default_factory=dict)  # name -> DMPModel
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({"schema_version": BANK_SCHEMA_VERSION, "meta": self.meta,
                           "models": {k: m.to_dict() for k, m in sorted(self.models.items())}},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema_version") != BANK_SCHEMA_VERSION:
            raise ParameterError(f"unsupported DMP bank schema {doc.get('schema_version')!r}")
        return cls({k: DMPModel.from_dict(v) for k, v in doc["models"].items()}, doc.get("meta", {}))

    def save(self, path):
        from .harness.io import atomic_write_text

        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())
