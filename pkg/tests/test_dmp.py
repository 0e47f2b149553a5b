import json

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from stamp import diffcore as dc
from stamp import dmp
from stamp import physsim as ps
from stamp.domains.pusher import SIDE_NORMALS, PusherSpec, _world, synthesize_demos
from stamp.errors import DimensionError, FitError, ParameterError


def known_model(n_basis=10, dims=2, seed=0):
    w = np.random.default_rng(seed).normal(scale=20.0, size=(n_basis, dims))
    return dmp.DMPModel(w, tau=1.0, alpha=4.0)


def rmse(a, b):
    return float(np.sqrt(np.mean(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))))


def test_fit_recovers_weights_of_known_model():
    model = known_model()
    dt = 1e-3
    x0, g = np.array([0.0, 0.0]), np.array([1.0, -0.5])
    traj = dmp.rollout(model, x0, g, int(1.0 / dt), dt)
    fitted = dmp.fit(dmp.to_demonstration(traj, dt, g), n_basis=10, tau=1.0, alpha=4.0)
    err = np.linalg.norm(fitted.weights - model.weights) / np.linalg.norm(model.weights)
    assert err < 1e-3


def test_zero_forcing_demo_fits_zero_weights():
    model = dmp.DMPModel.zero(1, 10)
    dt = 1e-3
    traj = dmp.rollout(model, [0.0], [1.0], 1000, dt)
    fitted = dmp.fit(dmp.to_demonstration(traj, dt, [1.0]), n_basis=10)
    assert np.max(np.abs(fitted.weights)) < 1e-6


def test_minimum_jerk_reconstruction():
    dt = 1e-3
    demo = dmp.minimum_jerk([0.0], [0.4], 1.0, dt)
    model = dmp.fit(demo, n_basis=20, tau=1.0, alpha=4.0)
    traj = dmp.rollout(model, [0.0], [0.4], len(demo.positions) - 1, dt)
    assert rmse(traj.positions, demo.positions) < 0.01 * demo.path_length


def test_zero_forcing_converges_without_overshoot():
    model = dmp.DMPModel.zero(1)
    dt = 1e-3
    x0, g = 0.0, 2.0
    traj = dmp.rollout(model, [x0], [g], model.settle_steps(dt), dt)
    x = np.asarray(traj.positions[:, 0])
    assert abs(x[-1] - g) < 1e-3 * abs(g - x0)
    assert np.max(x) <= g + 1e-6


def test_start_at_goal_stays_put():
    model = dmp.DMPModel.zero(2)
    traj = dmp.rollout(model, [0.3, 0.7], [0.3, 0.7], 200, 1e-2)
    np.testing.assert_array_equal(np.asarray(traj.positions), np.tile([0.3, 0.7], (201, 1)))


def test_goal_gradient_matches_finite_differences():
    model = known_model(dims=2, seed=4)
    prog = dc.Program(lambda g: jnp.sum(dmp.rollout(model, jnp.zeros(2), g, 300, 2e-3).positions[-1] ** 2), 2)
    g = np.array([0.6, -0.3])
    _, grad = dc.evaluate_with_gradient(prog, g)
    assert dc.relative_error(grad, dc.finite_difference_gradient(prog, g, 1e-5)) < 1e-4


def test_model_and_fit_validation():
    with pytest.raises(ParameterError):
        dmp.DMPModel(np.zeros((3, 1)), K=0.0)
    with pytest.raises(FitError):
        dmp.fit([])
    with pytest.raises(ParameterError):
        dmp.rollout(dmp.DMPModel.zero(1), [0.0], [1.0], 10, 0.0)
    with pytest.raises(DimensionError):
        dmp.rollout(dmp.DMPModel.zero(2), [0.0], [1.0], 10, 0.01)
    with pytest.raises(DimensionError):
        dmp.Demonstration(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)), 0.01)


def test_singular_normal_equations_raise_fit_error():
    demo = dmp.minimum_jerk([0.0], [1.0], 0.01, 1e-3)  # 11 samples, far fewer than bases
    with pytest.raises(FitError):
        dmp.fit(demo, n_basis=200, ridge=0.0)


def test_critical_damping_default():
    assert dmp.DMPModel.zero(1, K=64.0).D == 16.0


def test_bank_round_trip(tmp_path):
    bank = dmp.DMPBank({"N": known_model(), "E": known_model(seed=1)}, {"note": "x"})
    path = tmp_path / "bank.json"
    bank.save(str(path))
    back = dmp.DMPBank.load(str(path))
    assert set(back.models) == {"N", "E"}
    np.testing.assert_array_equal(back.models["E"].weights, bank.models["E"].weights)
    doc = json.loads(path.read_text())
    doc["schema_version"] = 99
    with pytest.raises(ParameterError):
        dmp.DMPBank.from_json(json.dumps(doc))


def tracker_world():
    return ps.World((ps.Disc(0.02, 0.2, 0.0, "p"),), (), substeps=2)


def test_tracking_control_zero_on_reference():
    w = tracker_world()
    ref = dmp.Reference(jnp.array([[[0.1, 0.2]]] * 3), jnp.array([[[0.5, 0.0]]] * 3), (0,))
    s = ps.make_state(w, disc_pos=[[0.1, 0.2]], disc_vel=[[0.5, 0.0]])
    np.testing.assert_array_equal(dmp.tracking_control(ref, s, 1), [[0.0, 0.0]])


def test_tracking_control_proportional_term():
    w = tracker_world()
    kp, kd = 300.0, 30.0
    ref = dmp.Reference(jnp.array([[[0.4, -0.1]]]), jnp.zeros((1, 1, 2)), (0,))
    s = ps.make_state(w, disc_pos=[[0.1, 0.1]])
    np.testing.assert_allclose(dmp.tracking_control(ref, s, 0, (kp, kd)), [[kp * 0.3, kp * -0.2]], atol=1e-12)
    with pytest.raises(ParameterError):
        dmp.tracking_control(ref, s, 0, (0.0, 1.0))


def test_pusher_tracks_fitted_push_primitive():
    spec = PusherSpec()
    world = _world(spec)
    demos = synthesize_demos(spec, 3, lengths=(0.2,), offsets=(0.0,))
    model = dmp.fit(demos, n_basis=10, tau=0.8, alpha=4.0)
    n = SIDE_NORMALS[3]
    start = n * (spec.cube_half + spec.pusher_radius + spec.approach_gap)
    goal = start - n * 0.2
    dt = world.control_dt
    ref = dmp.rollout(model, start, goal, spec.T, dt)
    reference = dmp.Reference(ref.positions[:, None, :], ref.velocities[:, None, :], (0,))
    x0 = ps.make_state(world, disc_pos=start[None], box_pos=np.zeros((1, 2)))
    traj = dmp.tracking_controls(reference, world, x0, spec.gains)
    path = float(np.sum(np.linalg.norm(np.diff(np.asarray(ref.positions), axis=0), axis=1)))
    assert rmse(traj.states.disc_pos[:, 0], ref.positions) < 0.05 * path
    assert float(traj.states.box_pos[-1, 0, 0]) > 0.1  # the cube was pushed east


@given(g=arrays(np.float64, 2, elements=st.floats(-2, 2)),
       scale=st.floats(0.0, 5.0), seed=st.integers(0, 1000))
def test_goal_convergence_with_bounded_forcing(g, scale, seed):
    x0 = np.array([0.1, -0.1])
    span = np.linalg.norm(g - x0)
    if span < 1e-3:
        return
    w = np.random.default_rng(seed).uniform(-1, 1, size=(10, 2)) * scale * span
    model = dmp.DMPModel(w, tau=1.0, alpha=4.0)
    dt = 1e-3
    traj = dmp.rollout(model, x0, g, model.settle_steps(dt), dt)
    assert np.linalg.norm(np.asarray(traj.positions[-1]) - g) < 1e-3 * span


@given(lam=st.floats(0.05, 20.0), g=arrays(np.float64, 2, elements=st.floats(-3, 3)))
def test_spatial_invariance_of_zero_forcing_model(lam, g):
    model = dmp.DMPModel.zero(2)
    x0 = np.array([0.5, -0.25])
    base = np.asarray(dmp.rollout(model, x0, g, 400, 5e-3).positions) - x0
    scaled = np.asarray(dmp.rollout(model, x0, x0 + lam * (g - x0), 400, 5e-3).positions) - x0
    np.testing.assert_allclose(scaled, lam * base, atol=1e-9 * max(1.0, lam * np.abs(base).max()))


@given(seed=st.integers(0, 1000), n_basis=st.integers(3, 15))
def test_fit_rollout_round_trip(seed, n_basis):
    model = known_model(n_basis, 1, seed)
    dt = 2e-3
    traj = dmp.rollout(model, [0.0], [1.0], 500, dt)
    fitted = dmp.fit(dmp.to_demonstration(traj, dt, [1.0]), n_basis=n_basis)
    again = dmp.rollout(fitted, [0.0], [1.0], 500, dt)
    length = float(np.sum(np.abs(np.diff(np.asarray(traj.positions[:, 0])))))
    assert rmse(again.positions, traj.positions) < 0.01 * length
