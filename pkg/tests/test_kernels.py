import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from stamp import diffcore as dc
from stamp import kernels as kern
from stamp.errors import DimensionError, ParameterError


def test_rbf_examples():
    assert float(kern.rbf([1.0, 2.0], [1.0, 2.0], 0.7)) == 1.0
    assert float(kern.rbf([0.0, 0.0], [0.6, 0.8], 1.0)) == pytest.approx(np.exp(-1.0), abs=1e-15)
    with pytest.raises(DimensionError):
        kern.rbf([0.0], [0.0, 1.0], 1.0)
    with pytest.raises(ParameterError):
        kern.rbf([0.0], [1.0], 0.0)


def test_rbf_gradient_matches_finite_differences():
    y = np.array([0.3, -0.2, 1.0])
    prog = dc.Program(lambda x: kern.rbf(x, jnp.asarray(y), 0.8), 3)
    x = np.array([0.1, 0.4, 0.5])
    _, g = dc.evaluate_with_gradient(prog, x)
    assert dc.relative_error(g, dc.finite_difference_gradient(prog, x, 1e-5)) < 1e-5


def test_von_mises_examples():
    assert float(kern.von_mises(0.4, 0.4)) == 1.0
    assert float(kern.von_mises(0.4 + 2 * np.pi, 0.4)) == pytest.approx(1.0, abs=1e-15)
    assert float(kern.von_mises(np.pi, 0.0, 1.0)) == pytest.approx(np.exp(-2.0), abs=1e-15)
    with pytest.raises(ParameterError):
        kern.von_mises(0.0, 1.0, 0.0)


def test_median_bandwidth_examples():
    # pairs of {0, 1, 3}: squared distances 1, 4, 9
    assert kern.median_bandwidth([0.0, 1.0, 3.0]) ** 2 == pytest.approx(4 / np.log(4), rel=1e-12)
    assert kern.median_bandwidth(np.ones((5, 2))) ** 2 == pytest.approx(1e-8, rel=1e-12)
    d = 1.7
    assert kern.median_bandwidth([[0.0, 0.0], [d, 0.0]]) ** 2 == pytest.approx(d ** 2 / np.log(3), rel=1e-12)
    with pytest.raises(ParameterError):
        kern.median_bandwidth([[1.0, 2.0]])


def test_billiards_composite_examples():
    spec = kern.KernelSpec("billiards_composite", {"s_v": 0.5, "s_z": 0.3})
    u = jnp.array([1.0, -1.0])
    z = jnp.array([0.1, 0.2, 0.3, 0.4])
    assert float(kern.composite_kernel(spec, u, u, z, z)) == 1.0
    shift = jnp.array([0.3, 0.0, 0.0, 0.0])
    assert float(kern.composite_kernel(spec, u, u, z, z + shift)) == pytest.approx(np.exp(-1.0), abs=1e-15)
    with pytest.raises(DimensionError):
        kern.composite_kernel(spec, u, u)


def pusher_spec(**kw):
    return kern.KernelSpec("pusher_composite", {"g_xy": 0.4, "z": 0.6}, {"g_xy": 1.0, "z": 2.0, "g_phi": 0.5},
                           K=2, m=4, **kw)


def test_pusher_composite_identical_particles():
    spec = pusher_spec()
    th = jnp.asarray(np.random.default_rng(0).normal(size=14))
    assert float(kern.composite_kernel(spec, th, th)) == pytest.approx(2 * (1.0 + 2.0 + 0.5), abs=1e-14)
    assert spec.upper_bound() == 7.0
    with pytest.raises(DimensionError):
        kern.composite_kernel(spec, th[:10], th[:10])


def test_pusher_composite_gradient_matches_finite_differences():
    spec = pusher_spec()
    rng = np.random.default_rng(1)
    b = jnp.asarray(rng.normal(size=14))
    prog = dc.Program(lambda a: kern.composite_kernel(spec, a, b), 14)
    a = rng.normal(size=14) * 0.3 + np.asarray(b)
    _, g = dc.evaluate_with_gradient(prog, a)
    assert dc.relative_error(g, dc.finite_difference_gradient(prog, a, 1e-5)) < 1e-4


def test_gram_matches_pairwise_kernel_and_autodiff():
    spec = pusher_spec()
    rng = np.random.default_rng(2)
    thetas = rng.normal(size=(5, 14))
    feats = np.stack([kern.pusher_features(t, 2, 4) for t in thetas])
    bw = {"g_xy0": 0.4, "g_xy1": 0.4, "z0": 0.6, "z1": 0.6}
    K, dK = kern.gram(spec, feats, bw)
    for j in range(5):
        for i in range(5):
            assert K[j, i] == pytest.approx(float(kern.composite_kernel(spec, thetas[j], thetas[i])), abs=1e-13)
    # feature-space gradient mapped to parameters equals autodiff through the feature map
    J = np.asarray(jax.jacfwd(lambda t: kern.pusher_features(t, 2, 4))(jnp.asarray(thetas[3])))
    auto = jax.grad(lambda t: kern.composite_kernel(spec, t, thetas[1]))(jnp.asarray(thetas[3]))
    np.testing.assert_allclose(dK[3, 1] @ J, auto, atol=1e-12)


def test_resolve_bandwidths_uses_fixed_values_and_medians():
    spec = kern.KernelSpec("billiards_composite", {"s_v": 0.5, "s_z": None})
    feats = np.random.default_rng(3).normal(size=(6, 6))
    bw = kern.resolve_bandwidths(spec, feats)
    assert bw["u0"] == 0.5
    assert bw["z"] == pytest.approx(kern.median_bandwidth(feats[:, 2:]))


def test_kernel_spec_validation():
    with pytest.raises(ParameterError):
        kern.KernelSpec("laplace")
    with pytest.raises(ParameterError):
        kern.KernelSpec("rbf", {"h": -1.0})
    with pytest.raises(ParameterError):
        kern.KernelSpec("von_mises", concentration=0.0)


vec = arrays(np.float64, 3, elements=st.floats(-4, 4))


@given(x=vec, y=vec, h=st.floats(0.1, 5))
def test_rbf_symmetric_and_bounded(x, y, h):
    kxy, kyx = float(kern.rbf(x, y, h)), float(kern.rbf(y, x, h))
    assert kxy == kyx
    assert 0.0 <= kxy <= 1.0


@given(phi=st.floats(-10, 10), psi=st.floats(-10, 10), kappa=st.floats(0.1, 5))
def test_von_mises_symmetric_and_bounded(phi, psi, kappa):
    a, b = float(kern.von_mises(phi, psi, kappa)), float(kern.von_mises(psi, phi, kappa))
    assert a == pytest.approx(b, abs=1e-15)
    assert 0.0 < a <= 1.0


@given(seed=st.integers(0, 10_000), n=st.integers(2, 16))
def test_pusher_gram_is_psd_symmetric_and_bounded(seed, n):
    spec = pusher_spec()
    thetas = np.random.default_rng(seed).normal(size=(n, 14))
    feats = np.stack([np.asarray(kern.pusher_features(t, 2, 4)) for t in thetas])
    K, _ = kern.gram(spec, feats)
    np.testing.assert_allclose(K, K.T, atol=1e-15)
    assert np.linalg.eigvalsh(K).min() > -1e-8
    assert np.all(K > 0) and np.all(K <= spec.upper_bound() + 1e-12)


@given(seed=st.integers(0, 10_000), n=st.integers(2, 16))
def test_rbf_and_billiards_grams_are_psd(seed, n):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, 6))
    for spec in (kern.KernelSpec("rbf"), kern.KernelSpec("billiards_composite"),
                 kern.KernelSpec("von_mises", concentration=2.0)):
        K, _ = kern.gram(spec, feats)
        np.testing.assert_allclose(K, K.T, atol=1e-15)
        assert np.linalg.eigvalsh(K).min() > -1e-8
