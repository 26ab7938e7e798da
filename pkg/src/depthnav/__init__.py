"""2D LiDAR racing simulator and from-scratch PPO trainer."""

from .env import RacingEnv, TaskConfig, compute_reward, map_action
from .geometry import CircleObstacle, Scene, Segment, Vec2, collision_check, load_scene, ray_cast
from .lidar import LidarConfig, LidarScan, ray_origin, scan
from .nn import PolicyParams, forward, init_params
from .ppo import Hyperparams, compute_gae, ppo_loss, train
from .vehicle import VehicleParams, VehicleState, resistive_force, step_dynamics

__version__ = "0.1.0"

__all__ = [
    "CircleObstacle", "Hyperparams", "LidarConfig", "LidarScan", "PolicyParams", "RacingEnv", "Scene",
    "Segment", "TaskConfig", "Vec2", "VehicleParams", "VehicleState", "collision_check", "compute_gae",
    "compute_reward", "forward", "init_params", "load_scene", "map_action", "ppo_loss", "ray_cast",
    "ray_origin", "resistive_force", "scan", "step_dynamics", "train",
]
