import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depsolar.dissipativity import (DissipativityMonitor, IncrementBounds, SupplyRateParams,
                                    check_asymptotic_decay, check_dissipation,
                                    check_increment_bounds, evaluate_trajectory, increments,
                                    saturation_end, storage, supply_rate)
from depsolar.mpc import MpcConfig, MpcController
from depsolar.plant import DimensionError, PlantState, step

vec2 = arrays(np.float64, 2, elements=st.floats(-100, 100))


def scalar(P=1.0, K=1.0, S=0.0, L=1.0, **kw):
    return SupplyRateParams([[P]], [[K]], [[S]], [[L]], **kw)


def closed_loop(model, x0, law, steps=200):
    xs, us = [np.asarray(x0, float)], []
    s = PlantState(x0)
    for _ in range(steps):
        u = model.clamp_input(law(s.x))
        us.append(u)
        s = step(model, s, u)
        xs.append(s.x)
    return np.array(xs[:-1]), np.array(us)


def test_increments():
    dx, du = increments([1, 2], [1, 2], [0], [0])
    assert not dx.any() and not du.any()
    dx, _ = increments([1, 2], [3, 1], [0], [0])
    assert np.array_equal(dx, [2, -1])
    _, du = increments([0], [0], [0.1], [-0.1])
    assert du == pytest.approx([-0.2])
    with pytest.raises(DimensionError):
        increments([1, 2], [1], [0], [0])


def test_increment_bounds():
    b = IncrementBounds(25.0, 1.0)
    assert check_increment_bounds([0, 0], [0, 0], b)
    assert check_increment_bounds([3, 4], [0], b)
    assert not check_increment_bounds([3, 4], [0], IncrementBounds(24.99, 1.0))
    with pytest.raises(ValueError):
        IncrementBounds(0.0, 1.0)


def test_supply_rate_examples():
    assert supply_rate([0], [0], scalar()) == 0.0
    assert supply_rate([2], [3], scalar(P=1, K=1, S=0)) == 13.0
    assert supply_rate([2], [3], scalar(P=0, K=0, S=1)) == 12.0


def test_storage_examples():
    p = SupplyRateParams.default()
    assert storage([0, 0], p) == 0.0
    assert storage([3, 4], p) == 25.0
    p2 = SupplyRateParams(np.eye(2), np.eye(2), np.zeros((2, 2)), 2 * np.eye(2))
    assert storage([1, 0], p2) == 2.0


def test_dissipation_examples():
    p = scalar(tau=0.5)
    assert check_dissipation(0, 0, 0, p)
    assert check_dissipation(4, 10, 0, p)
    assert not check_dissipation(6, 10, 0.5, p)


def test_decay_examples():
    assert check_asymptotic_decay([0.0] * 5, scalar()).decay_ok.all()
    v = check_asymptotic_decay([1, 0.5, 0.25, 0.125], scalar(gamma=0.5))
    assert v.decay_ok.all() and v.violated_at is None
    v = check_asymptotic_decay([1, 0.9, 0.9], scalar(gamma=0.5))
    assert not v.decay_ok.all() and v.violated_at == 1
    with pytest.raises(IndexError):
        check_asymptotic_decay([1, 0.5], scalar(k0=2))


def test_params_validation():
    with pytest.raises(ValueError):
        scalar(tau=1.0)
    with pytest.raises(ValueError):
        scalar(gamma=0.0)
    with pytest.raises(ValueError):
        scalar(L=0.0)
    with pytest.raises(ValueError):
        SupplyRateParams([[1, 2], [0, 1]], np.eye(2), np.zeros((2, 2)), np.eye(2))
    with pytest.raises(DimensionError):
        SupplyRateParams(np.eye(2), np.eye(3), np.zeros((2, 2)), np.eye(3))


@given(vec2, vec2)
def test_identity_multipliers_give_squared_norms(du, dx):
    p = SupplyRateParams.default()
    assert supply_rate(du, dx, p) == pytest.approx(du @ du + dx @ dx, rel=1e-12, abs=1e-12)


@given(arrays(np.float64, (3, 3), elements=st.floats(-10, 10)),
       arrays(np.float64, 3, elements=st.floats(-100, 100)))
def test_storage_nonnegative(M, dx):
    L = M.T @ M + 1e-3 * np.eye(3)
    p = SupplyRateParams(np.eye(3), np.eye(3), np.zeros((3, 3)), L)
    assert storage(dx, p) >= 0.0


def test_mpc_closed_loop_is_certified(tracker):
    ref = np.array([45.0, 45.0])
    ctrl = MpcController(tracker, MpcConfig.default())
    xs, us = closed_loop(tracker, [0.0, 0.0], lambda x: ctrl.feedback(x, ref))
    k0 = saturation_end(us, 0.45)
    v = evaluate_trajectory(xs, us, SupplyRateParams.default(k0=k0))
    assert 90 <= k0 <= 110
    assert v.decay_ok.all() and v.dissipation_ok.all() and v.stable


def test_destabilising_gain_is_flagged(tracker):
    ref = np.array([45.0, 45.0])
    xs, us = closed_loop(tracker, [45.01, 44.99], lambda x: 2.0 * (x - ref), steps=60)
    v = evaluate_trajectory(xs, us, SupplyRateParams.default())
    assert v.first_dissipation_violation is not None and v.first_dissipation_violation < 50


def test_saturation_end():
    assert saturation_end([[0.45, 0.1], [0.2, 0.0], [0.0, 0.0]], 0.45) == 1
    assert saturation_end([[0.0, 0.0]], 0.45) == 0


def test_increment_bounds_in_verdict():
    xs = np.array([[0.0], [1.0], [5.0]])
    us = np.array([[0.0], [0.0], [0.0]])
    v = evaluate_trajectory(xs, us, scalar(), IncrementBounds(2.0, 1.0))
    assert v.bounds_ok.tolist() == [True, False]


def test_monitor_recompute_is_bit_identical(tracker):
    ref = np.array([45.0, 45.0])
    ctrl = MpcController(tracker, MpcConfig.default())
    xs, us = closed_loop(tracker, [10.0, 70.0], lambda x: ctrl.feedback(x, ref), steps=150)
    mon = DissipativityMonitor(SupplyRateParams.default(k0=saturation_end(us, 0.45)))
    for x, u in zip(xs, us):
        mon.update(x, u)
    first = mon.verdict()
    mon.reset()
    for x, u in zip(xs, us):
        mon.update(x, u)
    again = mon.verdict()
    assert np.array_equal(first.psi, again.psi) and np.array_equal(first.V, again.V)
    assert first.violated_at == again.violated_at


def test_monitor_seed_reproduces_increment():
    mon = DissipativityMonitor(SupplyRateParams.default())
    mon.seed([1, 1], [2, 3], [0.1, 0.1], [0.2, 0.0])
    dx, du = mon.last_increments()
    assert np.array_equal(dx, [1, 2]) and np.allclose(du, [0.1, -0.1])


@settings(max_examples=30)
@given(st.lists(st.floats(0, 1e3), min_size=2, max_size=30), st.floats(0.05, 0.95))
def test_decay_flag_matches_ratio_rule(series, gamma):
    v = check_asymptotic_decay(series, scalar(gamma=gamma))
    for j in range(1, len(series)):
        expect = series[j - 1] <= 1e-12 or series[j] <= gamma * series[j - 1]
        assert v.decay_ok[j] == expect
