"""One-dimensional Gaussian mixture: the smallest multimodal sanity check."""
from __future__ import annotations

import jax.numpy as jnp
import jax.scipy.special as jss
import numpy as np

from ..errors import ParameterError
from ..kernels import KernelSpec
from ..svgd import Layout
from .base import Domain


class GaussianMixture(Domain):
    name = "gaussian_mixture"

    def __init__(self, weights=(0.5, 0.5), means=(-3.0, 3.0), sigma=0.5, init_range=(-6.0, 6.0),
                 bandwidth=None):
        w = np.asarray(weights, dtype=float)
        if w.shape != np.shape(means) or np.any(w <= 0) or sigma <= 0:
            raise ParameterError("mixture needs positive weights, one per mean, and sigma > 0")
        self.weights = w / w.sum()
        self.means = np.asarray(means, dtype=float)
        self.sigma = float(sigma)
        self.init_range = tuple(init_range)
        self.layout = Layout.of(("x", 1))
        self.kernel = KernelSpec("rbf", {"h": bandwidth})

    @classmethod
    def from_config(cls, cfg):
        return cls(**{k: v for k, v in cfg.items() if k in
                      ("weights", "means", "sigma", "init_range", "bandwidth")})

    def cost(self, theta):
        x = theta[0]
        logs = (jnp.log(jnp.asarray(self.weights)) - 0.5 * ((x - jnp.asarray(self.means)) / self.sigma) ** 2
                - jnp.log(self.sigma * jnp.sqrt(2 * jnp.pi)))
        return -jss.logsumexp(logs)

    def init_bounds(self):
        return np.array([self.init_range[0]]), np.array([self.init_range[1]])

    def assign(self, x):
        """Index of the nearest mixture mean."""
        x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
        return np.argmin(np.abs(x[:, None] - self.means[None, :]), axis=1)

    def plan(self, theta):
        return f"mode{int(self.assign(theta[0])[0])}"

    def solved(self, theta, cost=None):
        return bool(np.min(np.abs(self.means - theta[0])) < 2 * self.sigma)
