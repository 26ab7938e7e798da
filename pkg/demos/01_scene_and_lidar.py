"""
Scenes and the LiDAR
====================

Load the training track, put the car at its start pose and look at one scan.
"""

from pathlib import Path

import numpy as np

from depthnav.geometry import load_scene
from depthnav.lidar import LidarConfig, scan
from depthnav.vehicle import VehicleState

TRACKS = Path(__file__).resolve().parents[1] / "tracks"

scene = load_scene(TRACKS / "training.scene")
print(scene.name, len(scene.segments), "wall segments, bounds", scene.bounds)

# 170 rays over a 120 degree fan, 10 m range
lidar = LidarConfig()
state = VehicleState(scene.start_position, scene.start_yaw)
s = scan(scene, state, lidar)
print("closest wall %.3f m, %d of %d rays hit" % (s.distances.min(), s.hit_flags.sum(), lidar.n_rays))

# a crude polar picture: one character per 10 rays, darker means closer
shades = " .:-=+*#%@"
cols = s.distances.reshape(17, 10).min(axis=1)
print("right |" + "".join(shades[int((1 - d / lidar.r_max) * 9.99)] for d in cols) + "| left")

# rotating the car rotates the scan; the walls do not care which way we face
for yaw in np.linspace(-np.pi, np.pi, 5)[:-1]:
    d = scan(scene, VehicleState(scene.start_position, yaw), lidar).distances
    print("yaw %+5.2f rad: min %.2f m, mean %.2f m" % (yaw, d.min(), d.mean()))
