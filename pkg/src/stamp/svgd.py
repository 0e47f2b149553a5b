"""Particle inference: SVGD, importance-weighted discrete SVGD and SGD refinement.

One Stein step moves every particle along::

    delta_i = sum_j w_j * (grad log rho(theta_j) * k(theta_j, theta_i)
                           + grad_{theta_j} k(theta_j, theta_i))

with ``w_j = 1/n`` for plain SVGD and normalized importance weights
``w_j ~ p~(softmax(a_j)) / p(argmax(a_j))`` for the discrete variant. All
updates in an iteration are computed from the pre-iteration particle set.
:func:`run_inference` runs Stein steps until the windowed mean cost
settles, then switches to independent gradient ascent.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import jax
import jax.numpy as jnp
import numpy as np

from . import diffcore as dc
from . import kernels as kern
from . import relaxation as rlx
from .errors import DimensionError, IterationError, ParameterError, WeightError

SVGD = "SVGD"
SGD = "SGD"


@dataclass(frozen=True)
class Layout:
    """Named, contiguous slices partitioning a particle vector."""

    names: tuple
    sizes: tuple
    relaxed: tuple = ()  # names of slices holding relaxed plan variables

    def __post_init__(self):
        if len(self.names) != len(self.sizes) or any(s < 0 for s in self.sizes):
            raise DimensionError("layout needs one non-negative size per name")
        for name in self.relaxed:
            if name not in self.names:
                raise DimensionError(f"relaxed slice {name!r} not in layout")

    @classmethod
    def of(cls, *pairs, relaxed=()):
        return cls(tuple(p[0] for p in pairs), tuple(int(p[1]) for p in pairs), tuple(relaxed))

    @property
    def size(self):
        return int(sum(self.sizes))

    def slice(self, name):
        i = self.names.index(name)
        start = int(sum(self.sizes[:i]))
        return slice(start, start + self.sizes[i])

    def relaxed_mask(self):
        mask = np.zeros(self.size, dtype=bool)
        for name in self.relaxed:
            mask[self.slice(name)] = True
        return mask


class Particle:
    """View of one particle vector through its layout."""

    def __init__(self, theta, layout):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (layout.size,):
            raise DimensionError(f"particle of length {theta.shape} does not match layout size {layout.size}")
        self.theta = theta
        self.layout = layout

    def __getitem__(self, name):
        return self.theta[self.layout.slice(name)]

    @property
    def a(self):
        if not self.layout.relaxed:
            return np.zeros(0)
        return np.concatenate([self[n] for n in self.layout.relaxed])

    @property
    def motion(self):
        mask = ~self.layout.relaxed_mask()
        return self.theta[mask]


@dataclass
class ParticleSet:
    theta: np.ndarray
    layout: Layout
    rng_seed: int = 0

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64, ndmin=2)
        if self.theta.shape[0] < 1:
            raise DimensionError("a particle set needs at least one particle")
        if self.theta.shape[1] != self.layout.size:
            raise DimensionError(
                f"particles have {self.theta.shape[1]} entries, layout expects {self.layout.size}")

    def __len__(self):
        return self.theta.shape[0]

    def __getitem__(self, i):
        return Particle(self.theta[i], self.layout)

    def replace(self, theta):
        return ParticleSet(theta, self.layout, self.rng_seed)

    @classmethod
    def uniform(cls, layout, n, low, high, seed=0):
        """Sample ``n`` particles uniformly in the box ``[low, high]`` (per entry)."""
        rng = np.random.default_rng(seed)
        low = np.broadcast_to(np.asarray(low, dtype=np.float64), (layout.size,))
        high = np.broadcast_to(np.asarray(high, dtype=np.float64), (layout.size,))
        return cls(rng.uniform(low, high, size=(n, layout.size)), layout, seed)


@dataclass
class InferenceConfig:
    step_size: float = 1e-2
    sgd_step_size: float = 1e-3
    svgd_iterations: int = 500
    sgd_iterations: int = 100
    convergence_window: int = 50
    convergence_tolerance: float = 1e-3
    gradient_clip: float = 1e3
    temperature: float = 1.0
    snapshot_stride: int = 0
    use_weights: bool = False
    chunk_size: int = 16
    workers: Optional[int] = None

    def __post_init__(self):
        if not (self.step_size > 0 and self.sgd_step_size > 0):
            raise ParameterError("step sizes must be positive")
        if self.svgd_iterations < 0 or self.sgd_iterations < 0:
            raise ParameterError("iteration counts must be non-negative")
        if self.convergence_window < 2:
            raise ParameterError("convergence window must be >= 2")
        if not self.gradient_clip > 0:
            raise ParameterError("gradient clip must be positive")
        if not self.temperature > 0:
            raise ParameterError("temperature must be positive")


@dataclass
class PosteriorModel:
    """Differentiable surrogate posterior over particles.

    ``log_density`` is the log surrogate up to a constant. ``features``
    (a ``jax.numpy`` function of the particle) feeds the kernel; ``None``
    means the raw particle. For the weighted discrete update
    ``discrete_log_prob(plan, theta)`` and ``relaxed_log_prob(probs, theta)``
    return log-probabilities of the one-hot plan ``(K, m)`` and of its
    softmax relaxation. ``update_mask`` freezes coordinates (blockwise
    optimization); ``bounds`` keeps motion parameters inside a box.
    """

    log_density: dc.Program
    features: Optional[Callable] = None
    discrete_log_prob: Optional[Callable] = None
    relaxed_log_prob: Optional[Callable] = None
    action_space: Optional[rlx.ActionSpace] = None
    relaxed_slice: Optional[slice] = None
    update_mask: Optional[np.ndarray] = None
    bounds: Optional[tuple] = None  # (low, high) box the particles are projected onto
    name: str = "posterior"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return self.log_density.n_inputs

    def evaluator(self, chunk_size=16, workers=None):
        key = ("eval", chunk_size)
        if key not in self._cache:
            logp = self.log_density.fn
            feat = self.features

            def per_particle(theta):
                value, grad = jax.value_and_grad(logp)(theta)
                if feat is None:
                    return value, grad, theta, jnp.zeros((0, 0))
                return value, grad, feat(theta), jax.jacfwd(feat)(theta)

            self._cache[key] = dc.BatchEvaluator(per_particle, chunk_size, workers)
        ev = self._cache[key]
        ev.workers = workers
        return ev

    def weight_evaluator(self, temperature=1.0, chunk_size=16, workers=None):
        if self.discrete_log_prob is None or self.relaxed_log_prob is None:
            raise WeightError("importance weights need discrete_log_prob and relaxed_log_prob")
        key = ("weights", temperature, chunk_size)
        if key not in self._cache:
            space, sl = self.action_space, self.relaxed_slice
            if space is None:
                raise WeightError("importance weights need the action space")
            sl = sl if sl is not None else slice(0, space.dim)
            disc, relx = self.discrete_log_prob, self.relaxed_log_prob

            def log_w(theta):
                a = theta[sl].reshape(space.K, space.m)
                probs = dc.softmax(a / temperature, axis=-1)
                plan = jax.nn.one_hot(jnp.argmax(a, axis=-1), space.m)
                return relx(probs, theta), disc(plan, theta)

            self._cache[key] = dc.BatchEvaluator(log_w, chunk_size, workers)
        ev = self._cache[key]
        ev.workers = workers
        return ev


class Evaluation:
    """Log densities, clipped gradients and kernel features for a particle set."""

    def __init__(self, logp, grads, feats, jac):
        self.logp = logp
        self.grads = grads
        self.feats = feats
        self.jac = jac

    @property
    def cost(self):
        return -self.logp


def evaluate(pset, model, clip=1e3, chunk_size=16, workers=None):
    logp, grads, feats, jac = model.evaluator(chunk_size, workers)(pset.theta)
    for i in range(len(pset)):
        if not np.isfinite(logp[i]):
            raise IterationError(f"non-finite log-density at particle {i}", particle=i)
        if not np.all(np.isfinite(grads[i])):
            raise IterationError(f"non-finite gradient at particle {i}", particle=i)
    grads = np.clip(grads, -clip, clip)
    if model.features is None:
        jac = None
    return Evaluation(logp, grads, feats, jac)


def stein_direction(grads, K, dK, weights, jac=None):
    """``delta_i = sum_j w_j (grads_j K[j,i] + grad_{theta_j} K[j,i])``.

    ``dK`` holds feature-space gradients; ``jac`` (``(n, F, D)``) maps them
    back to particle space when the kernel acts on derived features.
    """
    if jac is not None:
        dK = np.einsum("jif,jfd->jid", dK, jac)
    attract = (weights[:, None] * K).T @ grads
    repulse = np.einsum("j,jid->id", weights, dK)
    return attract + repulse


def importance_weights(pset, model, space=None, temperature=1.0, chunk_size=16, workers=None):
    """Raw weights ``w_j = p~(softmax(a_j)) / p(argmax(a_j))`` (all finite, > 0)."""
    if space is not None and model.action_space is None:
        model.action_space = space
    log_rel, log_disc = model.weight_evaluator(temperature, chunk_size, workers)(pset.theta)
    for j in range(len(pset)):
        if not np.isfinite(log_disc[j]):
            raise WeightError(f"zero discrete probability for particle {j}", particle=j)
    log_w = log_rel - log_disc
    w = np.exp(log_w)
    bad = ~(np.isfinite(w) & (w > 0))
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise WeightError(f"importance weight of particle {j} is not finite and positive", particle=j)
    return w


def _normalized_weights(pset, model, temperature, chunk_size, workers):
    log_rel, log_disc = model.weight_evaluator(temperature, chunk_size, workers)(pset.theta)
    for j in range(len(pset)):
        if not np.isfinite(log_disc[j]):
            raise WeightError(f"zero discrete probability for particle {j}", particle=j)
    log_w = log_rel - log_disc
    if not np.all(np.isfinite(log_w)):
        j = int(np.flatnonzero(~np.isfinite(log_w))[0])
        raise WeightError(f"non-finite importance weight for particle {j}", particle=j)
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def _apply(pset, model, delta, eps):
    if model.update_mask is not None:
        delta = delta * model.update_mask
    theta = pset.theta + eps * delta
    if model.bounds is not None:
        theta = np.clip(theta, model.bounds[0], model.bounds[1])
    mask = pset.layout.relaxed_mask()
    if mask.any() and model.action_space is not None:
        u = model.action_space.u_bound
        theta[:, mask] = np.clip(theta[:, mask], -u, u)
    return pset.replace(theta)


def _kernel_terms(pset, ev, kernel):
    K, dK = kern.gram(kernel, ev.feats)
    return K, dK


def svgd_update(pset, model, kernel, eps, clip=1e3, chunk_size=16, workers=None, evaluation=None):
    """One synchronous SVGD step with uniform weights ``1/n``."""
    ev = evaluation or evaluate(pset, model, clip, chunk_size, workers)
    n = len(pset)
    K, dK = _kernel_terms(pset, ev, kernel)
    weights = np.full(n, 1.0 / n)
    return _apply(pset, model, stein_direction(ev.grads, K, dK, weights, ev.jac), eps)


def dsvgd_update(pset, model, kernel, eps, weights=None, clip=1e3, temperature=1.0,
                 chunk_size=16, workers=None, evaluation=None):
    """One discrete-SVGD step: Stein direction with normalized importance weights.

    ``weights`` may be passed explicitly (raw, unnormalized); otherwise they
    are computed from the model.
    """
    ev = evaluation or evaluate(pset, model, clip, chunk_size, workers)
    if weights is None:
        w = _normalized_weights(pset, model, temperature, chunk_size, workers)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(pset),) or not np.all(np.isfinite(w) & (w > 0)):
            raise WeightError("weights must be finite, positive, one per particle")
        w = w / w.sum()
    K, dK = _kernel_terms(pset, ev, kernel)
    return _apply(pset, model, stein_direction(ev.grads, K, dK, w, ev.jac), eps)


def sgd_update(pset, model, eps, clip=1e3, chunk_size=16, workers=None, evaluation=None):
    """Independent gradient-ascent step on each particle's log-density."""
    ev = evaluation or evaluate(pset, model, clip, chunk_size, workers)
    return _apply(pset, model, ev.grads, eps)


# -- run loop ---------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    phase: str
    mean_cost: float
    min_cost: float
    wall_time: float


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (iteration, theta copy)
    final: Optional[ParticleSet] = None
    final_costs: Optional[np.ndarray] = None
    switch_iteration: Optional[int] = None
    error: Optional[str] = None

    @property
    def mean_costs(self):
        return np.array([r.mean_cost for r in self.records])

    @property
    def phases(self):
        return [r.phase for r in self.records]


def _converged(history, window, tol):
    if len(history) < 2 * window:
        return False
    prev = float(np.mean(history[-2 * window:-window]))
    cur = float(np.mean(history[-window:]))
    return abs(cur - prev) / (abs(prev) + 1e-12) < tol


def run_inference(pset, model, kernel, config, callback=None):
    """SVGD (or weighted DSVGD) until convergence, then SGD refinement.

    Returns ``(final ParticleSet, RunTrace)``. An :class:`IterationError`
    aborts the run; the partial trace is attached to the exception as
    ``trace``.
    """
    trace = RunTrace()
    history = []
    phase = SVGD if config.svgd_iterations > 0 else SGD
    sgd_left = config.sgd_iterations
    svgd_done = 0
    it = 0
    cs, wk = config.chunk_size, config.workers
    t0 = time.perf_counter()
    try:
        while True:
            if phase == SVGD and svgd_done >= config.svgd_iterations:
                phase = SGD
                trace.switch_iteration = it
            if phase == SGD and sgd_left <= 0:
                break
            ev = evaluate(pset, model, config.gradient_clip, cs, wk)
            cost = ev.cost
            trace.records.append(IterationRecord(
                it, phase, float(np.mean(cost)), float(np.min(cost)), time.perf_counter() - t0))
            if config.snapshot_stride and it % config.snapshot_stride == 0:
                trace.snapshots.append((it, pset.theta.copy()))
            if phase == SVGD:
                if config.use_weights:
                    pset = dsvgd_update(pset, model, kernel, config.step_size,
                                        temperature=config.temperature, chunk_size=cs,
                                        workers=wk, evaluation=ev)
                else:
                    pset = svgd_update(pset, model, kernel, config.step_size, evaluation=ev)
                svgd_done += 1
                history.append(float(np.mean(cost)))
                if _converged(history, config.convergence_window, config.convergence_tolerance):
                    svgd_done = config.svgd_iterations
            else:
                pset = sgd_update(pset, model, config.sgd_step_size, evaluation=ev)
                sgd_left -= 1
            if callback is not None:
                callback(it, phase, pset)
            it += 1
        ev = evaluate(pset, model, config.gradient_clip, cs, wk)
    except IterationError as exc:
        exc.iteration = it
        trace.error = str(exc)
        trace.final = pset
        exc.trace = trace
        raise
    trace.final = pset
    trace.final_costs = ev.cost
    if config.snapshot_stride:
        trace.snapshots.append((it, pset.theta.copy()))
    return pset, trace
