"""Laser scanner and fish-eye camera mapping.

Fish-eye camera models and their calibration, georeferencing of laser
profiles and images, point cloud colouring, strip meshing, triangle
texturing with atlas packing, and a synthetic street to exercise it all.
"""

from .camera import FisheyeIntrinsics, project_points, unproject_points
from .georef import LaserProfile, Pose, RigidTransform, SensorRig, StampedImage, Trajectory
from .pipeline import PipelineConfig, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "FisheyeIntrinsics",
    "LaserProfile",
    "PipelineConfig",
    "Pose",
    "RigidTransform",
    "SensorRig",
    "StampedImage",
    "Trajectory",
    "project_points",
    "run_pipeline",
    "unproject_points",
]
