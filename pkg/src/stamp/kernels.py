"""Kernels, median-heuristic bandwidths and Gram-matrix assembly.

Particles are compared through a feature map (the raw parameters, or
parameters plus simulated task indicators). A kernel is a weighted sum of
terms; each term is an RBF or von Mises kernel over one or more feature
groups, each group with its own bandwidth::

    rbf term:       exp(-sum_g ||phi_g - phi_g'||^2 / h_g^2)
    von Mises term: exp(kappa * sum_d (cos(phi_d - phi_d') - 1))

The Gram assembly returns both ``K[j, i] = k(phi_j, phi_i)`` and the
gradient of each entry w.r.t. its *first* argument, which the Stein update
needs for the repulsive term.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from . import diffcore as dc
from .errors import DimensionError, ParameterError

BANDWIDTH_FLOOR = 1e-8
KINDS = ("rbf", "von_mises", "billiards_composite", "pusher_composite")


def rbf(x, y, bandwidth):
    """``exp(-||x - y||^2 / bandwidth^2)``."""
    x = jnp.atleast_1d(jnp.asarray(x, dtype=jnp.float64))
    y = jnp.atleast_1d(jnp.asarray(y, dtype=jnp.float64))
    if x.shape != y.shape:
        raise DimensionError(f"rbf: shapes {x.shape} and {y.shape} differ")
    if not bandwidth > 0:
        raise ParameterError("rbf bandwidth must be positive")
    return dc.exp(-jnp.sum((x - y) ** 2) / bandwidth ** 2)


def von_mises(phi, psi, concentration=1.0):
    """``exp(kappa * (cos(phi - psi) - 1))``; equals 1 at ``phi == psi``."""
    if not concentration > 0:
        raise ParameterError("von Mises concentration must be positive")
    return dc.exp(concentration * (jnp.sum(dc.cos(jnp.asarray(phi) - jnp.asarray(psi))) - jnp.size(phi)))


def median_bandwidth(points):
    """Median heuristic: ``h^2 = median(squared pairwise distances) / log(n + 1)``.

    Returns ``h``; ``h^2`` is floored at ``1e-8``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n < 2:
        raise ParameterError("median heuristic needs at least two points")
    iu = np.triu_indices(n, k=1)
    sq = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)[iu]
    h2 = max(float(np.median(sq)) / np.log(n + 1.0), BANDWIDTH_FLOOR)
    return float(np.sqrt(h2))


@dataclass(frozen=True)
class Term:
    kind: str  # "rbf" or "von_mises"
    weight: float
    groups: tuple  # ((name, slice, bandwidth_key), ...)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel configuration.

    ``bandwidths`` maps a bandwidth key to a fixed value, or to ``None`` for
    the median heuristic recomputed from the current particles. Keys are
    ``h`` for ``rbf``; ``s_v``/``s_z`` for the billiards composite;
    ``g_xy``/``z`` for the pusher composite. ``weights`` holds the pusher
    term weights ``g_xy``, ``z``, ``g_phi``.
    """

    kind: str = "rbf"
    bandwidths: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    concentration: float = 1.0
    K: int = 1
    m: int = 4
    angular: bool = True  # composite goals carry an orientation g_phi

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown kernel kind {self.kind!r}")
        for key, val in list(self.bandwidths.items()) + list(self.weights.items()):
            if val is not None and not val > 0:
                raise ParameterError(f"kernel parameter {key!r} must be positive")
        if not self.concentration > 0:
            raise ParameterError("concentration must be positive")

    @property
    def goal_width(self):
        return self.m + (3 if self.angular else 2)

    def weight(self, key):
        return float(self.weights.get(key, 1.0))

    def upper_bound(self):
        if self.kind == "pusher_composite":
            ang = self.weight("g_phi") if self.angular else 0.0
            return self.K * (self.weight("g_xy") + self.weight("z") + ang)
        return 1.0

    def feature_dim(self, theta_dim=None):
        if self.kind == "billiards_composite":
            return 6
        if self.kind == "pusher_composite":
            return self.K * self.goal_width
        if theta_dim is None:
            raise DimensionError("plain kernels need the feature dimension")
        return theta_dim

    def terms(self, feature_dim):
        if self.kind == "rbf":
            return (Term("rbf", 1.0, (("all", slice(0, feature_dim), "h"),)),)
        if self.kind == "von_mises":
            return (Term("von_mises", 1.0, (("all", slice(0, feature_dim), None),)),)
        if self.kind == "billiards_composite":
            if feature_dim != 6:
                raise DimensionError("billiards kernel expects features [u0 (2), z (4)]")
            return (Term("rbf", 1.0, (("u0", slice(0, 2), "s_v"), ("z", slice(2, 6), "s_z"))),)
        width = self.goal_width
        if feature_dim != self.K * width:
            raise DimensionError(f"pusher kernel expects {self.K * width} features")
        out = []
        for k in range(self.K):
            o = k * width
            out.append(Term("rbf", self.weight("g_xy"), ((f"g_xy{k}", slice(o, o + 2), "g_xy"),)))
            out.append(Term("rbf", self.weight("z"), ((f"z{k}", slice(o + 2, o + 2 + self.m), "z"),)))
            if self.angular:
                out.append(Term("von_mises", self.weight("g_phi"),
                                ((f"g_phi{k}", slice(o + 2 + self.m, o + width), None),)))
        return tuple(out)


# -- feature maps for the composite kernels ---------------------------------

def billiards_features(u0, z):
    return jnp.concatenate([jnp.asarray(u0), jnp.asarray(z)])


def pusher_features(theta, K, m, temperature=1.0, angular=True):
    """``[g_k^xy, softmax(a_k), g_k^phi]`` for each phase ``k``.

    ``theta`` is laid out as ``[a_1 .. a_K, g_1 .. g_K]`` with ``g_k = (x, y, phi)``,
    or ``(x, y)`` when ``angular`` is off.
    """
    theta = jnp.asarray(theta)
    d = 3 if angular else 2
    a = theta[:K * m].reshape(K, m)
    g = theta[K * m:K * m + d * K].reshape(K, d)
    z = dc.softmax(a / temperature, axis=-1)
    return jnp.concatenate([g[:, :2], z, g[:, 2:]], axis=1).reshape(-1)


def composite_kernel(spec, theta_a, theta_b, derived_a=None, derived_b=None, bandwidths=None):
    """Scalar kernel between two particles (``jax.numpy``; differentiable in ``theta_a``).

    For the billiards composite ``derived_*`` are the wall indicators
    ``z_{1:4}``; the pusher composite derives its features from ``theta``.
    """
    if spec.kind == "billiards_composite":
        if derived_a is None or derived_b is None:
            raise DimensionError("billiards kernel needs wall indicators for both particles")
        fa, fb = billiards_features(theta_a, derived_a), billiards_features(theta_b, derived_b)
    elif spec.kind == "pusher_composite":
        n = spec.K * (spec.m + (3 if spec.angular else 2))
        if jnp.shape(theta_a)[-1] != n or jnp.shape(theta_b)[-1] != n:
            raise DimensionError(f"pusher kernel expects particles of length {n}")
        fa = pusher_features(theta_a, spec.K, spec.m, angular=spec.angular)
        fb = pusher_features(theta_b, spec.K, spec.m, angular=spec.angular)
    else:
        fa, fb = jnp.atleast_1d(jnp.asarray(theta_a)), jnp.atleast_1d(jnp.asarray(theta_b))
    bw = _fixed_bandwidths(spec, bandwidths)
    total = 0.0
    for term in spec.terms(fa.shape[-1]):
        if term.kind == "rbf":
            expo = sum(jnp.sum((fa[sl] - fb[sl]) ** 2) / bw[key] ** 2 for _, sl, key in term.groups)
            total = total + term.weight * dc.exp(-expo)
        else:
            sl = term.groups[0][1]
            total = total + term.weight * von_mises(fa[sl], fb[sl], spec.concentration)
    return total


def _fixed_bandwidths(spec, bandwidths):
    bw = {k: v for k, v in spec.bandwidths.items() if v is not None}
    bw.update(bandwidths or {})
    for key in ("h", "s_v", "s_z", "g_xy", "z"):
        bw.setdefault(key, 1.0)
    return bw


def resolve_bandwidths(spec, feats):
    """Per-group bandwidths: fixed values from the KernelSpec, else median heuristic.

    Groups sharing a bandwidth key but belonging to different phases get
    their own median (keys are returned per group name).
    """
    feats = np.asarray(feats)
    out = {}
    for term in spec.terms(feats.shape[1]):
        for name, sl, key in term.groups:
            if key is None:
                continue
            fixed = spec.bandwidths.get(key)
            if fixed is not None:
                out[name] = float(fixed)
            elif feats.shape[0] < 2:
                out[name] = 1.0
            else:
                out[name] = median_bandwidth(feats[:, sl])
    return out


def gram(spec, feats, bandwidths=None):
    """Gram matrix and first-argument feature gradients.

    Returns ``K`` with ``K[j, i] = k(phi_j, phi_i)`` and ``dK`` of shape
    ``(n, n, F)`` with ``dK[j, i] = d k(phi_j, phi_i) / d phi_j``.
    """
    feats = np.asarray(feats, dtype=np.float64)
    n, F = feats.shape
    if bandwidths is None:
        bandwidths = resolve_bandwidths(spec, feats)
    K = np.zeros((n, n))
    dK = np.zeros((n, n, F))
    for term in spec.terms(F):
        if term.kind == "rbf":
            expo = np.zeros((n, n))
            grads = []
            for name, sl, _ in term.groups:
                h2 = bandwidths[name] ** 2
                diff = feats[:, None, sl] - feats[None, :, sl]  # [j, i] = phi_j - phi_i
                expo += np.sum(diff ** 2, axis=-1) / h2
                grads.append((sl, -2.0 * diff / h2))
            k = np.exp(-expo)
            K += term.weight * k
            for sl, g in grads:
                dK[:, :, sl] += term.weight * k[..., None] * g
        else:
            sl = term.groups[0][1]
            diff = feats[:, None, sl] - feats[None, :, sl]
            kappa = spec.concentration
            k = np.exp(kappa * np.sum(np.cos(diff) - 1.0, axis=-1))
            K += term.weight * k
            dK[:, :, sl] += term.weight * k[..., None] * (-kappa * np.sin(diff))
    return K, dK
