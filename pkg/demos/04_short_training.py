"""
A short PPO run
===============

Thirty thousand steps on the stadium corridor. Not enough to lap it, but the
episodic return already climbs.
"""

from pathlib import Path

import numpy as np

from depthnav.geometry import load_scene
from depthnav.ppo import Hyperparams, Trainer, decile_means

TRACKS = Path(__file__).resolve().parents[1] / "tracks"
scene = load_scene(TRACKS / "corridor_oval.scene")


def progress(t):
    if t.n_updates % 5 == 0 and t.records:
        d = t.last_diagnostics
        print("update %3d  step %6d  episodes %4d  avg return %7.1f  kl %.4f  clip %.3f"
              % (t.n_updates, t.global_step, len(t.records), t.records[-1].moving_avg,
                 d.get("approx_kl", np.nan), d.get("clip_fraction", np.nan)))


trainer = Trainer(scene, Hyperparams(total_steps=30_000, log_interval=0), seed=0, callbacks=[progress])
trainer.run()

first, last = decile_means([r.ret for r in trainer.records])
print("first tenth of episodes: %.1f, last tenth: %.1f" % (first, last))
