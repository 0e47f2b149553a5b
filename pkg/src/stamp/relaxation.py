"""Discrete action alphabet and its continuous relaxation.

A plan of ``K`` phases over ``m`` actions is encoded as ``K`` one-hot vectors.
The relaxed variable is a real vector of length ``m*K``, read block-wise;
``gamma`` maps it to the one-hot plan by per-block argmax and ``gamma_tilde``
by per-block softmax. Under the uniform base distribution on
``[-u, u]^(mK)`` every one of the ``m**K`` plans has probability ``1/m**K``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from . import diffcore as dc
from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class ActionSpace:
    m: int
    K: int = 1
    u_bound: float = 10.0
    action_names: tuple = field(default=())

    def __post_init__(self):
        if self.m < 2 or self.K < 1:
            raise ParameterError(f"need m >= 2 and K >= 1, got m={self.m}, K={self.K}")
        if not self.u_bound > 0:
            raise ParameterError("u_bound must be positive")
        if not self.action_names:
            object.__setattr__(self, "action_names", tuple(f"a{i}" for i in range(self.m)))
        if len(self.action_names) != self.m:
            raise DimensionError("need one name per action")

    @property
    def dim(self):
        return self.m * self.K

    @property
    def n_plans(self):
        return self.m ** self.K

    def plans(self):
        """Every plan as a tuple of action indices, in lexicographic order."""
        return list(itertools.product(range(self.m), repeat=self.K))

    def blocks(self, a):
        a = np.asarray(a, dtype=np.float64)
        if a.shape[-1] != self.dim:
            raise DimensionError(f"relaxed plan must have length {self.dim}, got {a.shape[-1]}")
        return a.reshape(a.shape[:-1] + (self.K, self.m))

    def plan_indices(self, a):
        """Per-phase argmax indices (lowest index wins ties)."""
        return np.argmax(self.blocks(a), axis=-1)

    def render(self, indices):
        return "-".join(self.action_names[i] for i in np.atleast_1d(indices))

    def one_hot(self, indices):
        return np.eye(self.m)[np.asarray(indices)]


def gamma(space, a):
    """One-hot plan, shape ``(K, m)``: argmax of each block, ties to lowest index."""
    return space.one_hot(space.plan_indices(a))


def gamma_tilde(space, a, temperature=1.0):
    """Per-block softmax of ``a / temperature``, shape ``(K, m)``; differentiable."""
    if not temperature > 0:
        raise ParameterError("temperature must be positive")
    a = jnp.asarray(a)
    if a.shape[-1] != space.dim:
        raise DimensionError(f"relaxed plan must have length {space.dim}, got {a.shape[-1]}")
    return dc.softmax(a.reshape(a.shape[:-1] + (space.K, space.m)) / temperature, axis=-1)


def base_log_density(space, a):
    """Uniform log-density ``-mK log(2u)``; ``-inf`` flags out-of-support points.

    Written in ``jax.numpy`` so its gradient (zero inside the support) is
    available to callers.
    """
    a = jnp.asarray(a)
    inside = jnp.all(jnp.abs(a) <= space.u_bound)
    const = -space.dim * jnp.log(2.0 * space.u_bound)
    return jnp.where(inside, const + 0.0 * jnp.sum(a), -jnp.inf)


def in_support(space, a):
    return bool(np.all(np.abs(np.asarray(a)) <= space.u_bound))


def sample_uniform(space, rng, n):
    return rng.uniform(-space.u_bound, space.u_bound, size=(n, space.dim))


def clamp_to_support(space, a):
    return np.clip(a, -space.u_bound, space.u_bound)


def plan_frequencies(space, samples):
    """Empirical frequency of every plan in ``space.plans()`` order."""
    idx = space.plan_indices(samples)  # (n, K)
    flat = np.ravel_multi_index(idx.T, (space.m,) * space.K) if space.K > 1 else idx[:, 0]
    counts = np.bincount(flat, minlength=space.n_plans)
    return counts / len(samples)


def multilinear_extension(space, table):
    """Extend a plan -> probability table to the product of simplices.

    ``table`` maps plan index tuples to probabilities. The result maps a
    ``(K, m)`` array of per-phase distributions to
    ``sum_plan table[plan] * prod_k probs[k, plan_k]``.
    """
    plans = space.plans()
    values = jnp.array([table.get(p, 0.0) for p in plans])
    idx = jnp.array(plans)  # (P, K)

    def extended(probs):
        probs = jnp.asarray(probs)
        weights = jnp.prod(probs[jnp.arange(space.K)[None, :], idx], axis=1)
        return jnp.dot(weights, values)

    return extended

