"""
Checking the hand-written backward pass
=======================================

The actor-critic network computes its own gradients. Central differences of
the full clipped loss should agree to many digits.
"""

import numpy as np

from depthnav import nn
from depthnav.selfcheck import finite_difference, random_instance, relative_error

rng = np.random.default_rng(0)
params, batch = random_instance(rng, obs_dim=12, hidden=8, batch=16)
spec = nn.LossSpec(clip_eps=0.2, vf_coef=0.5, ent_coef=0.01)

analytic = nn.backward(params, batch, spec).grads.flat()
numeric = finite_difference(params, batch, spec)
err = relative_error(analytic, numeric)
print("%d parameters, worst relative error %.2e" % (analytic.size, err.max()))

# which block is the least accurate?
start = 0
for name, value in params.items():
    stop = start + value.size
    print("  %-8s %6d entries  max err %.1e" % (name, value.size, err[start:stop].max()))
    start = stop

# flip one sign in the analytic gradient and the check notices
analytic[3] *= -1
print("after corrupting one entry: %.2e" % relative_error(analytic, numeric).max())
