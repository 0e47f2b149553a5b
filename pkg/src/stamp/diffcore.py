"""Reverse-mode differentiation substrate and finite-difference oracle.

Programs are plain Python functions written against :mod:`jax.numpy` and the
primitive wrappers in this module (:func:`maximum`, :func:`select`, ...).
Reverse-mode gradients come from JAX; the central-difference oracle is pure
NumPy and never touches the autodiff path.

Conventions fixed here and relied on elsewhere:

* ``maximum``/``minimum``/``abs`` send the whole gradient to the first
  argument at ties.
* ``select`` treats its condition as a constant; gradients only flow through
  the chosen branch.
* all arithmetic is float64.
"""
from __future__ import annotations

import contextlib
import contextvars
import os
from concurrent.futures import ThreadPoolExecutor

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DimensionError, EvaluationError, ParameterError  # noqa: E402

DEFAULT_GRADIENT_BOUND = 1e6
WORKERS_ENV = "STAMP_WORKERS"


# -- primitive tracking ----------------------------------------------------

class _Tracker:
    def __init__(self):
        self.step = 0


_TRACKER: contextvars.ContextVar[_Tracker | None] = contextvars.ContextVar(
    "stamp_tracker", default=None)


@contextlib.contextmanager
def checking():
    """Evaluate eagerly and raise on the first non-finite primitive output."""
    token = _TRACKER.set(_Tracker())
    try:
        with jax.disable_jit():
            yield
    finally:
        _TRACKER.reset(token)


def _track(name, out):
    tracker = _TRACKER.get()
    if tracker is None:
        return out
    step = tracker.step
    tracker.step += 1
    if isinstance(out, jax.core.Tracer):
        return out
    if not np.all(np.isfinite(np.asarray(out))):
        raise EvaluationError(
            f"non-finite output from primitive '{name}' at step {step}", name, step)
    return out


def add(a, b):
    return _track("add", jnp.add(a, b))


def sub(a, b):
    return _track("sub", jnp.subtract(a, b))


def mul(a, b):
    return _track("mul", jnp.multiply(a, b))


def div(a, b):
    return _track("div", jnp.divide(a, b))


def exp(x):
    return _track("exp", jnp.exp(x))


def log(x):
    return _track("log", jnp.log(x))


def sqrt(x):
    return _track("sqrt", jnp.sqrt(x))


def sin(x):
    return _track("sin", jnp.sin(x))


def cos(x):
    return _track("cos", jnp.cos(x))


def sigmoid(x):
    return _track("sigmoid", jax.nn.sigmoid(x))


def softmax(x, axis=-1):
    return _track("softmax", jax.nn.softmax(x, axis=axis))


def maximum(a, b):
    # ties resolve to the first argument
    return _track("max", jnp.where(a >= b, a, b))


def minimum(a, b):
    return _track("min", jnp.where(a <= b, a, b))


def abs(x):  # noqa: A001
    return _track("abs", jnp.where(x >= 0, x, -x))


def clamp(x, lo, hi):
    return _track("clamp", minimum(maximum(x, lo), hi))


def select(cond, a, b):
    """Comparison-gated select; ``cond`` carries no gradient."""
    return _track("select", jnp.where(jax.lax.stop_gradient(cond), a, b))


def relu(x):
    return maximum(x, jnp.zeros_like(x))


def safe_norm(v, axis=-1, eps=1e-24):
    """Euclidean norm with a finite gradient at the origin."""
    return sqrt(jnp.sum(v * v, axis=axis) + eps)


# -- programs ----------------------------------------------------------------

class Program:
    """An immutable traced program ``R^n -> R`` or ``R^n -> R^k``.

    ``fn`` receives a 1-D float64 array of length ``n_inputs``.
    """

    def __init__(self, fn, n_inputs, name=None):
        if n_inputs < 1:
            raise ParameterError("a program needs at least one input")
        self.fn = fn
        self.n_inputs = int(n_inputs)
        self.name = name or getattr(fn, "__name__", "program")
        self._forward = jax.jit(fn)
        self._vg = jax.jit(jax.value_and_grad(fn))
        self._jac = jax.jit(jax.jacfwd(fn))

    def __repr__(self):
        return f"Program({self.name!r}, n_inputs={self.n_inputs})"

    def _coerce(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.n_inputs:
            raise DimensionError(
                f"{self.name}: expected {self.n_inputs} inputs, got {x.shape[0]}")
        return x

    def __call__(self, x):
        x = self._coerce(x)
        out = np.asarray(self._forward(x))
        if not np.all(np.isfinite(out)):
            _localize(self, x)
        return out.item() if out.ndim == 0 else out

    def plus(self, other, alpha=1.0, beta=1.0):
        """The program ``alpha * self + beta * other``."""
        if other.n_inputs != self.n_inputs:
            raise DimensionError("programs have different arity")
        f, g = self.fn, other.fn
        return Program(lambda x: alpha * f(x) + beta * g(x), self.n_inputs,
                       name=f"{alpha}*{self.name}+{beta}*{other.name}")


def _localize(program, x):
    """Replay eagerly to find the first non-finite primitive, then raise."""
    with checking():
        out = program.fn(jnp.asarray(x))
    if not np.all(np.isfinite(np.asarray(out))):
        raise EvaluationError(
            f"{program.name}: non-finite output (untracked operation)", None, -1)
    raise EvaluationError(f"{program.name}: non-finite output", None, -1)


def clip_gradient(g, bound=DEFAULT_GRADIENT_BOUND):
    return np.clip(g, -bound, bound)


def evaluate_with_gradient(program, inputs, clip=DEFAULT_GRADIENT_BOUND):
    """Value and reverse-mode gradient of a scalar program.

    Raises :class:`EvaluationError` naming the primitive and its step index
    when any intermediate is non-finite.
    """
    x = program._coerce(inputs)
    value, grad = program._vg(x)
    value = np.asarray(value)
    if value.ndim != 0:
        raise DimensionError(f"{program.name}: output is not scalar; use jacobian()")
    grad = np.asarray(grad)
    if not np.isfinite(value):
        _localize(program, x)
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise EvaluationError(
            f"{program.name}: non-finite gradient entry {bad}", "gradient", bad)
    if clip is not None:
        grad = clip_gradient(grad, clip)
    return float(value), grad


def jacobian(program, inputs):
    """Forward-mode Jacobian, shape ``(k, n)``, one row per output coordinate."""
    x = program._coerce(inputs)
    jac = np.asarray(program._jac(x))
    if not np.all(np.isfinite(jac)):
        _localize(program, x)
        raise EvaluationError(f"{program.name}: non-finite Jacobian", "jacobian", -1)
    return jac


def finite_difference_gradient(program, inputs, step=1e-5):
    """Central differences ``(f(x+h e_i) - f(x-h e_i)) / 2h`` per coordinate."""
    if not step > 0:
        raise ParameterError("finite-difference step must be positive")
    x = program._coerce(inputs)
    f = program._forward
    out = np.empty((x.size,) + np.shape(f(x)))
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        fp = np.asarray(f(xp))
        fm = np.asarray(f(xm))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise EvaluationError(
                f"{program.name}: non-finite value under perturbation of input {i}",
                "finite_difference", i)
        out[i] = (fp - fm) / (2.0 * step)
    return out if out.ndim == 1 else np.moveaxis(out, 0, -1)


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / (np.linalg.norm(b) + floor))


# -- batched evaluation ------------------------------------------------------

def worker_count(default=None):
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    if default is not None:
        return max(1, int(default))
    return max(1, min(4, os.cpu_count() or 1))


class BatchEvaluator:
    """Evaluate a per-particle function over the rows of a matrix.

    Rows are cut into equal chunks (padded with the last row) that go to a
    thread pool and are reassembled in index order. ``chunk_size`` is the
    smallest chunk; it doubles while at least ``MIN_CHUNKS`` chunks remain,
    since wider batches vectorize better. The chunking depends only on the
    row count, so outputs are identical for any worker count. (Changing
    the batch width itself may move results by an ulp.)
    """

    MIN_CHUNKS = 8

    def __init__(self, fn, chunk_size=16, workers=None):
        self.chunk_size = int(chunk_size)
        self.workers = workers
        self._fn = jax.jit(jax.vmap(fn))

    def _run_chunk(self, block):
        out = self._fn(block)
        return jax.tree_util.tree_map(np.asarray, out)

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        c = self.chunk_size
        while n // (2 * c) >= self.MIN_CHUNKS:
            c *= 2
        blocks = []
        for start in range(0, n, c):
            block = X[start:start + c]
            if block.shape[0] < c:
                pad = np.repeat(block[-1:], c - block.shape[0], axis=0)
                block = np.concatenate([block, pad], axis=0)
            blocks.append(block)
        workers = worker_count(self.workers)
        if workers == 1 or len(blocks) == 1:
            results = [self._run_chunk(b) for b in blocks]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self._run_chunk, blocks))
        joined = jax.tree_util.tree_map(
            lambda *parts: np.concatenate(parts, axis=0)[:n], *results)
        return joined


# -- randomized smooth programs (gradient-check fodder) ---------------------

_UNARY = ("exp", "log", "sqrt", "sin", "cos", "sigmoid", "square")
_BINARY = ("add", "sub", "mul", "div")


def random_program(seed, n_inputs=3, n_ops=20):
    """Build a random smooth program of ``n_ops`` primitives.

    Domains are kept safe: ``log``/``sqrt``/``div`` see ``1 + v**2``-shaped
    arguments and ``exp`` sees a bounded argument, so the result is finite
    and smooth everywhere.
    """
    rng = np.random.default_rng(seed)
    ops_list = []
    n_vals = n_inputs
    for _ in range(n_ops):
        if rng.random() < 0.5:
            op = _UNARY[rng.integers(len(_UNARY))]
            args = (int(rng.integers(n_vals)),)
        else:
            op = _BINARY[rng.integers(len(_BINARY))]
            args = (int(rng.integers(n_vals)), int(rng.integers(n_vals)))
        ops_list.append((op, args))
        n_vals += 1
    coeffs = rng.normal(size=n_vals - n_inputs)

    def fn(x):
        vals = [x[i] for i in range(n_inputs)]
        for op, args in ops_list:
            a = vals[args[0]]
            if op == "exp":
                v = exp(jnp.tanh(a))
            elif op == "log":
                v = log(1.0 + a * a)
            elif op == "sqrt":
                v = sqrt(1.0 + a * a)
            elif op == "sin":
                v = sin(a)
            elif op == "cos":
                v = cos(a)
            elif op == "sigmoid":
                v = sigmoid(a)
            elif op == "square":
                v = jnp.tanh(a) * a
            else:
                b = vals[args[1]]
                if op == "add":
                    v = add(a, b)
                elif op == "sub":
                    v = sub(a, b)
                elif op == "mul":
                    v = mul(jnp.tanh(a), b)
                else:
                    v = div(a, 1.0 + b * b)
            vals.append(v)
        return jnp.dot(jnp.asarray(coeffs), jnp.stack(vals[n_inputs:]))

    return Program(fn, n_inputs, name=f"random_program[{seed}]")
