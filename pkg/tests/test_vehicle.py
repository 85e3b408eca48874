import numpy as np
import pytest

from admmsampling.util import numerical_jacobian
from admmsampling.vehicle import (RobotState, ControlInput, ControlBounds, CostWeights,
                                  step, step_array, rollout, rollout_array, linearize,
                                  linearize_horizon, wrap_angle, control_cost,
                                  control_cost_quadratic)


def test_step_forward():
    s = step(RobotState(0., 0., 0.), ControlInput(1., 0.), 0.2)
    assert (s.x, s.y, s.heading) == pytest.approx((0.2, 0., 0.))


def test_step_turn_in_place():
    s = step(RobotState(1., 1., np.pi / 2), ControlInput(0., np.pi), 0.2)
    assert (s.x, s.y) == pytest.approx((1., 1.))
    assert s.heading == pytest.approx(0.7 * np.pi)


def test_heading_updated_after_position():
    s = step(RobotState(0., 0., np.pi / 2), ControlInput(1., 1.), 0.5)
    assert s.x == pytest.approx(0., abs=1e-15)
    assert s.y == pytest.approx(0.5)


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(RobotState(0., 0.), ControlInput(), 0.)


def test_displacement_is_speed_times_dt():
    rng = np.random.RandomState(0)
    for _ in range(20):
        s = RobotState(*rng.normal(size=3))
        u = ControlInput(rng.uniform(-2., 2.), rng.uniform(-3., 3.))
        n = step(s, u, 0.2)
        assert np.linalg.norm(n.position - s.position) == pytest.approx(abs(u.v) * 0.2)


def test_wrap_angle():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)


def test_rollout_composes_steps():
    s0 = RobotState(1., 2., 0.3)
    controls = [ControlInput(1., 0.5), ControlInput(-0.5, 1.), ControlInput(2., -1.)]
    states = rollout(s0, controls, 0.2)
    s = s0
    for u, got in zip(controls, states):
        s = step(s, u, 0.2)
        assert got.to_array() == pytest.approx(s.to_array())


def test_rollout_empty():
    with pytest.raises(ValueError):
        rollout(RobotState(0., 0.), [], 0.2)


def test_rollout_array_matches_step_array():
    rng = np.random.RandomState(1)
    x0 = np.array([1., 2., 0.3])
    u = rng.uniform(-1., 1., (5, 2))
    states = rollout_array(x0, u, 0.2)
    prev = np.vstack([x0, states[:-1]])
    assert np.allclose(step_array(prev, u, 0.2), states)


def test_linearize_against_finite_differences():
    rng = np.random.RandomState(2)
    for _ in range(10):
        x = rng.normal(size=3)
        u = rng.normal(size=2)
        A, B = linearize(RobotState(*x), ControlInput(*u), 0.2)
        x[2] = RobotState(*x).heading
        fa = numerical_jacobian(lambda y: step_array(y, u, 0.2), x)
        fb = numerical_jacobian(lambda v: step_array(x, v, 0.2), u)
        assert np.allclose(A, fa, atol=1e-6)
        assert np.allclose(B, fb, atol=1e-6)


def test_linearize_horizon_shapes():
    A, B = linearize_horizon(np.zeros((4, 3)), np.ones((4, 2)), 0.2)
    assert A.shape == (4, 3, 3)
    assert B.shape == (4, 3, 2)
    assert np.allclose(A[:, 0, 2], 0.)
    assert np.allclose(A[:, 1, 2], 0.2)


def test_control_cost_examples():
    w = CostWeights()
    assert control_cost([ControlInput(0., 0.)], ControlInput(0., 0.), w) == 0.
    assert control_cost([ControlInput(1., 0.)], ControlInput(0., 0.), w) == pytest.approx(1.01)
    assert control_cost([ControlInput(1., 0.)], ControlInput(1., 0.), w) == pytest.approx(0.01)


def test_control_cost_quadratic_matches():
    rng = np.random.RandomState(3)
    w = CostWeights([[0.02, 0.01], [0.01, 0.03]], [[1., 0.2], [0.2, 2.]])
    prev = ControlInput(0.4, -0.7)
    P, q, const = control_cost_quadratic(4, prev, w)
    for _ in range(5):
        u = rng.normal(size=(4, 2))
        flat = u.ravel()
        expected = control_cost(u, prev, w)
        assert 0.5 * flat.dot(P).dot(flat) + q.dot(flat) + const == pytest.approx(expected)


def test_cost_weights_validated():
    with pytest.raises(ValueError):
        CostWeights(Q=[[1., 0.], [0., -1.]])
    with pytest.raises(ValueError):
        CostWeights(R=[[1., 1.], [0., 1.]])


def test_control_bounds():
    b = ControlBounds()
    assert b.contains([[2., -np.pi]])
    assert not b.contains([[2.1, 0.]])
    assert b.contains([[2.1, 0.]], tol=0.2)
    with pytest.raises(ValueError):
        ControlBounds(v_min=1., v_max=0.)
