"""loamkit: lidar odometry toolkit.

Registration built on surface covariances reconstructed from stored
normals, an adaptive voxel grid filter with near-constant output size,
bounded-memory sliding-window map stores, and a synthetic-scene evaluation
harness.
"""

from .geometry import (PointCloud, Pose, concat_clouds, covariance_from_normal,
                       covariance_from_normal_explicit, plane_basis, se3_apply,
                       se3_exp, se3_log)
from .index import BruteForceIndex, IncrementalKdTree, StaticKdTree
from .kernels import backend_name as kernel_backend_name
from .mapping import (IkdMapStore, MapMemoryStats, MapStore, MapWindow,
                      MtoOctreeMapStore, make_map_store)
from .normals import estimate_normals
from .pipeline import ExternalPrior, FrameReport, LidarOdometry, PipelineConfig
from .preprocess import (AdaptiveVoxelState, ImuSample, LidarFeed,
                         adaptive_voxel_filter, body_filter, merge_clouds,
                         motion_deskew, voxel_downsample)
from .registration import (GicpConfig, RegistrationResult, fitness, gicp_align,
                           rotational_gate)
from .simulate import (Box, Cylinder, LidarModel, Plane, SceneSpec,
                       TrajectorySample, simulate_scan)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveVoxelState", "Box", "BruteForceIndex", "Cylinder", "ExternalPrior",
    "FrameReport", "GicpConfig", "IkdMapStore", "ImuSample",
    "IncrementalKdTree", "LidarFeed", "LidarModel", "LidarOdometry",
    "MapMemoryStats", "MapStore", "MapWindow", "MtoOctreeMapStore", "Plane",
    "PipelineConfig", "PointCloud", "Pose", "RegistrationResult", "SceneSpec",
    "StaticKdTree", "TrajectorySample", "adaptive_voxel_filter", "body_filter",
    "concat_clouds", "covariance_from_normal", "covariance_from_normal_explicit",
    "estimate_normals", "fitness", "gicp_align", "kernel_backend_name",
    "make_map_store", "merge_clouds", "motion_deskew", "plane_basis",
    "rotational_gate", "se3_apply", "se3_exp", "se3_log", "simulate_scan",
    "voxel_downsample",
]
