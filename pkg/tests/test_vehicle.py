import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthnav.errors import ContractError
from depthnav.geometry import Vec2
from depthnav.vehicle import VehicleParams, VehicleState, resistive_force, steady_state_speed, step_dynamics, wrap_angle

P = VehicleParams()


def at_rest(yaw=0.0):
    return VehicleState(Vec2(0.0, 0.0), yaw, 0.0)


def test_resistive_force_examples():
    assert resistive_force(0.0, P) == 0.0
    assert resistive_force(5.0, P) == 20.0
    assert resistive_force(1.0, VehicleParams(C_f1=0.0, C_f2=0.0)) == 0.0


def test_rest_stays_at_rest():
    s = step_dynamics(at_rest(), 0.0, 0.0, P)
    assert s.v_joint == 0.0
    assert s.position == (0.0, 0.0)


def test_first_step_full_throttle():
    s = step_dynamics(at_rest(), 1.0, 0.0, P)
    assert s.v_joint == pytest.approx(0.5, abs=1e-15)
    assert s.position.x == pytest.approx(0.025 * 0.5)


def test_full_throttle_reaches_five_meters_per_second():
    s = at_rest()
    for _ in range(2000):
        s = step_dynamics(s, 1.0, 0.0, P)
    assert s.v_joint == pytest.approx(5.0, abs=1e-9)


@pytest.mark.parametrize("throttle", [0.1, 0.35, 0.6, 0.9])
def test_steady_state_speed_solves_balance(throttle):
    s = at_rest()
    for _ in range(10_000):
        s = step_dynamics(s, throttle, 0.0, P)
    v = s.v_joint
    assert P.C_T * throttle == pytest.approx(v * (v * P.C_f1 + P.C_f2), abs=1e-6)
    assert v == pytest.approx(steady_state_speed(throttle, P), abs=1e-3)


def test_speed_clamped_at_v_max():
    fast = VehicleParams(C_T=100.0)
    s = at_rest()
    for _ in range(500):
        s = step_dynamics(s, 1.0, 0.0, fast)
        assert s.v_joint <= fast.v_max


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=300), st.floats(-0.36, 0.36))
def test_speed_stays_in_range(throttles, steering):
    s = at_rest()
    for t in throttles:
        s = step_dynamics(s, t, steering, P)
        assert 0.0 <= s.v_joint <= P.v_max
        assert -math.pi < s.yaw <= math.pi


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
def test_zero_steering_moves_straight(yaw, throttles):
    s = at_rest(yaw)
    for t in throttles:
        nxt = step_dynamics(s, t, 0.0, P)
        assert nxt.yaw == s.yaw
        step = math.hypot(nxt.position.x - s.position.x, nxt.position.y - s.position.y)
        assert step == pytest.approx(P.t_s * nxt.v_joint, abs=1e-12)
        s = nxt


def test_left_steering_turns_left():
    s = step_dynamics(VehicleState(Vec2(0, 0), 0.0, 2.0), 0.5, 0.36, P)
    expected = P.t_s * (s.v_joint / P.wheelbase) * math.tan(0.36)
    assert s.yaw == pytest.approx(expected)
    assert s.position.y > 0


def test_deterministic():
    seq = [(0.3, 0.1), (1.0, -0.36), (0.0, 0.2)] * 20
    a = b = at_rest()
    for t, d in seq:
        a = step_dynamics(a, t, d, P)
        b = step_dynamics(b, t, d, P)
    assert a == b


@pytest.mark.parametrize("throttle, steering", [(-0.1, 0.0), (1.1, 0.0), (0.5, 0.37), (0.5, -0.4)])
def test_out_of_range_controls(throttle, steering):
    with pytest.raises(ContractError):
        step_dynamics(at_rest(), throttle, steering, P)


@pytest.mark.parametrize("kw", [dict(C_T=0.0), dict(C_f1=-1.0), dict(wheelbase=0.0), dict(delta_min=0.1), dict(t_s=0.0)])
def test_invalid_params(kw):
    with pytest.raises(ContractError):
        VehicleParams(**kw)


def test_wrap_angle():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
