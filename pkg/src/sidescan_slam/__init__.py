"""Batch SLAM for side-scan sonar surveys.

Dense correspondences between overlapping side-scan images drive robust
subframe relative-pose estimation; the resulting loop closures refine the
dead-reckoning trajectory through pose-graph optimization, and the dense
matches are triangulated into a quasi-dense bathymetric point cloud. A
synthetic survey simulator provides exact ground truth for evaluation.
"""

from .config import PipelineConfig, SimConfig, load_config, save_config
from .geometry import Landmark, Pose3, SensorConfig
from .pipeline import RunResult, run

__version__ = "0.1.0"

__all__ = [
    "Landmark",
    "PipelineConfig",
    "Pose3",
    "RunResult",
    "SensorConfig",
    "SimConfig",
    "load_config",
    "run",
    "save_config",
]
