import numpy as np
import pytest

from loamkit.geometry import PointCloud, Pose
from loamkit.normals import estimate_normals
from loamkit.preprocess import voxel_downsample
from loamkit.simulate import LidarModel, scene_room, simulate_scan


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.c_[np.cos(theta) * np.sin(phi),
                 np.sin(theta) * np.sin(phi),
                 np.cos(phi)]


def random_unit_vectors(n: int, rng) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.fixture(scope="session")
def room_scan():
    """A voxelized room scan with normals, shared across registration tests."""
    scene = scene_room(seed=2)
    lidar = LidarModel(channels=16, horizontal_resolution=np.deg2rad(1.2),
                       vertical_fov=np.deg2rad(30), max_range=25)
    raw = simulate_scan(scene, Pose(np.eye(3), [0.0, 0.0, 1.5]), lidar)
    vox = voxel_downsample(raw, 0.25)
    return estimate_normals(vox, k=10, viewpoint=(0.0, 0.0, 0.0))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def make_cloud(points, **kw) -> PointCloud:
    return PointCloud(points=np.asarray(points, dtype=float), **kw)
