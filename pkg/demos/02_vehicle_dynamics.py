"""
Driving the bicycle model
=========================

Full throttle from rest: the speed climbs to the point where drive force and
drag balance. Then a constant steering input traces a circle.
"""

import math

from depthnav.geometry import Vec2
from depthnav.vehicle import VehicleParams, VehicleState, step_dynamics, steady_state_speed

p = VehicleParams()
state = VehicleState(Vec2(0.0, 0.0), 0.0)
for k in range(1, 201):
    state = step_dynamics(state, 1.0, 0.0, p)
    if k in (1, 10, 40, 200):
        print("t=%5.3f s  v=%.4f m/s  x=%.3f m" % (k * p.t_s, state.v_joint, state.position.x))
print("closed-form limit: %.4f m/s" % steady_state_speed(1.0, p))

# quarter throttle, full left lock: radius = wheelbase / tan(delta)
v = steady_state_speed(0.25, p)
state = VehicleState(Vec2(0.0, 0.0), 0.0, v)
xs, ys = [], []
for _ in range(2000):
    state = step_dynamics(state, 0.25, p.delta_max, p)
    xs.append(state.position.x)
    ys.append(state.position.y)
print("turning circle diameter %.3f m, expected %.3f m" % (max(ys) - min(ys), 2 * p.wheelbase / math.tan(p.delta_max)))
