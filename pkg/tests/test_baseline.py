import math

import numpy as np
import pytest

from depthnav.baseline import PidController, PidParams
from depthnav.errors import ContractError
from depthnav.lidar import LidarConfig

ANGLES = LidarConfig().relative_angles()
LEFT = (ANGLES >= math.radians(45)) & (ANGLES <= math.radians(90))
RIGHT = (ANGLES <= -math.radians(45)) & (ANGLES >= -math.radians(90))
FRONT = np.abs(ANGLES) <= math.radians(15)


def ranges(left=10.0, right=10.0, front=10.0):
    d = np.full(ANGLES.shape, 10.0)
    d[LEFT] = left
    d[RIGHT] = right
    d[FRONT] = front
    return d


def test_on_target_drives_straight_at_cruise():
    pid = PidController()
    a_t, a_delta = pid.act(ranges(left=0.8))
    assert a_delta == pytest.approx(0.0, abs=1e-12)
    assert a_t == 0.5


def test_wall_too_close_steers_away():
    # positive steering is a left turn, so a close left wall must give a_delta < 0
    assert PidController().act(ranges(left=0.5))[1] < 0
    right = PidController(PidParams(side="right"))
    assert right.act(ranges(right=0.5))[1] > 0


def test_wall_too_far_steers_toward():
    assert PidController().act(ranges(left=1.5))[1] > 0


def test_front_obstacle_slows_down():
    a_t, _ = PidController().act(ranges(left=0.8, front=1.0))
    assert a_t == pytest.approx(0.25)


def test_outputs_bounded():
    pid = PidController(PidParams(kp=50.0, kd=5.0))
    rng = np.random.default_rng(0)
    for _ in range(200):
        a_t, a_delta = pid.act(rng.uniform(0.05, 10.0, ANGLES.shape))
        assert -1 <= a_delta <= 1 and 0 <= a_t <= 1


def test_derivative_and_reset():
    pid = PidController(PidParams(kp=0.0, kd=0.1))
    pid.act(ranges(left=0.8))
    _, steer = pid.act(ranges(left=0.7))
    # error rose by 0.1 over one 25 ms tick -> derivative 4, output -0.4 for a left wall
    assert steer == pytest.approx(-0.4)
    pid.reset()
    assert pid.act(ranges(left=0.7))[1] == 0.0


def test_deterministic():
    d = np.random.default_rng(1).uniform(0.3, 10, ANGLES.shape)
    a, b = PidController(), PidController()
    for _ in range(5):
        assert np.array_equal(a.act(d), b.act(d))


def test_narrow_fov_falls_back_to_edge_ray():
    pid = PidController(lidar=LidarConfig(fov=math.radians(60)))
    assert pid._side.sum() == 1 and pid._side[-1]


@pytest.mark.parametrize("kw", [dict(kp=-1), dict(cruise_throttle=1.5), dict(side="up"),
                                dict(target_wall_distance=0)])
def test_invalid_params(kw):
    with pytest.raises(ContractError):
        PidParams(**kw)
