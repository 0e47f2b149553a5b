"""Shared plumbing for problem domains.

A domain owns a particle layout, a cost ``C(theta)`` written in
``jax.numpy``, the kernel used between particles and a way to read the
discrete plan off a particle. The posterior is ``exp(-C)`` on the support
of the base distribution.
"""
from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .. import diffcore as dc
from ..svgd import ParticleSet, PosteriorModel


@dataclass
class Stage:
    """One inference stage: a posterior plus the coordinates it may move."""

    name: str
    model: PosteriorModel
    cost: object  # jnp function theta -> scalar
    kernel: object = None  # stage-specific KernelSpec; None means the domain's kernel


class Domain:
    name = "domain"
    layout = None
    space = None
    kernel = None
    solved_threshold = 1e-3

    # -- to be provided by subclasses ---------------------------------------
    def cost(self, theta):
        raise NotImplementedError

    def features(self, theta):  # kernel features; None means the raw particle
        return None

    def init_bounds(self):
        raise NotImplementedError

    def bounds(self):
        """Box the particles are kept in during inference (``None``: unbounded)."""
        return None

    def plan(self, theta):
        """Discrete mode of a particle as a short string."""
        return "-"

    def diagnostics(self, theta):
        """Per-particle quantities reported next to the cost."""
        return {}

    def topology(self, theta):
        """Signature of discrete events; finite differences are only trusted
        where it does not change under perturbation."""
        return None

    # -- derived ------------------------------------------------------------
    def log_density(self, theta):
        return -self.cost(theta)

    def program(self):
        if not hasattr(self, "_program"):
            self._program = dc.Program(self.cost, self.layout.size, name=f"{self.name}_cost")
        return self._program

    def _feature_fn(self):
        return None

    def model(self):
        if not hasattr(self, "_model"):
            self._model = PosteriorModel(
                dc.Program(self.log_density, self.layout.size, name=f"{self.name}_logp"),
                features=self._feature_fn(), action_space=self.space, bounds=self.bounds(),
                name=self.name)
        return self._model

    def stages(self):
        return [Stage("all", self.model(), self.cost)]

    def initial_particles(self, n, seed=0):
        low, high = self.init_bounds()
        return ParticleSet.uniform(self.layout, n, low, high, seed)

    def costs(self, thetas, chunk_size=16, workers=None):
        if not hasattr(self, "_batch_cost"):
            self._batch_cost = dc.BatchEvaluator(self.cost, chunk_size, workers)
        return np.asarray(self._batch_cost(np.atleast_2d(thetas)))

    def plan_cost(self, theta):
        """Cost with the relaxed plan replaced by its argmax (same as ``cost`` without one)."""
        return self.cost(theta)

    def plan_costs(self, thetas, chunk_size=16, workers=None):
        if not hasattr(self, "_batch_plan_cost"):
            self._batch_plan_cost = dc.BatchEvaluator(self.plan_cost, chunk_size, workers)
        return np.asarray(self._batch_plan_cost(np.atleast_2d(thetas)))

    def solved(self, theta, cost=None):
        c = float(self.program()(theta)) if cost is None else cost
        return c < self.solved_threshold

    def gradient_check_program(self):
        return self.program()


def softmin_weights(values, temperature=1.0, mask=None):
    """``exp(-v/T) / sum exp(-v/T)`` over the masked entries."""
    logits = -values / temperature
    if mask is not None:
        logits = jnp.where(mask, logits, -jnp.inf)
    return dc.softmax(logits)


def masked_softmax(values, mask):
    return dc.softmax(jnp.where(mask, values, -jnp.inf))


def stop(x):
    return jax.lax.stop_gradient(x)
