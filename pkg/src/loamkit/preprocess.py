"""Point-cloud preprocessing: de-skew, multi-lidar merge, body filter,
adaptive voxel grid filter.

All operations are pure functions over their inputs; the adaptive filter
returns an updated controller state instead of mutating the one passed in.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import PointCloud, Pose, concat_clouds, se3_apply


@dataclass(frozen=True)
class ImuSample:
    """One gyro/accelerometer reading. Acceleration is carried for dataset
    fidelity; rotation-only de-skew never reads it."""

    timestamp: float
    angular_velocity: np.ndarray
    linear_acceleration: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular_velocity",
                           np.asarray(self.angular_velocity, dtype=np.float64).reshape(3))
        object.__setattr__(self, "linear_acceleration",
                           np.asarray(self.linear_acceleration, dtype=np.float64).reshape(3))


@dataclass
class LidarFeed:
    """One lidar stream: label, mounting extrinsic, and health bookkeeping."""

    id: str
    extrinsic: Pose
    last_msg_time: float = 0.0
    timeout: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("feed timeout must be > 0")

    def healthy(self, now: float) -> bool:
        return (now - self.last_msg_time) <= self.timeout


@dataclass(frozen=True)
class AdaptiveVoxelState:
    """Feedback controller state for the adaptive voxel grid filter.

    ``alpha`` damps the update d_leaf * (n_out / n_desired)**alpha;
    1.0 is the raw proportional law, 0.5 critically damps surfaces whose
    voxelized count scales like d**-2.
    """

    d_leaf: float = 0.25
    n_desired: int = 2000
    d_min: float = 0.01
    d_max: float = 2.0
    alpha: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.d_min <= self.d_leaf <= self.d_max):
            raise ValueError("require 0 < d_min <= d_leaf <= d_max")
        if self.n_desired <= 0:
            raise ValueError("n_desired must be > 0")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")


def _gyro_rotations(stamps: np.ndarray, imu: list[ImuSample],
                    scan_start: float, scan_end: float) -> Rotation:
    """Per-point rotations taking each stamp's frame into the scan-end frame.

    Integrates body rates piecewise (trapezoidal between samples, held
    constant beyond the covered range) to get R_(start->t) at each stamp,
    then forms R_end<-t = R_(start->end)^-1 R_(start->t).
    """
    times = np.array([s.timestamp for s in imu])
    omegas = np.array([s.angular_velocity for s in imu])
    # integration grid: scan bounds plus interior imu samples
    interior = times[(times > scan_start) & (times < scan_end)]
    grid = np.concatenate([[scan_start], interior, [scan_end]])
    w_grid = np.empty((len(grid), 3))
    for i, t in enumerate(grid):
        if t <= times[0]:
            w_grid[i] = omegas[0]
        elif t >= times[-1]:
            w_grid[i] = omegas[-1]
        else:
            j = np.searchsorted(times, t, side="right") - 1
            f = (t - times[j]) / (times[j + 1] - times[j])
            w_grid[i] = (1.0 - f) * omegas[j] + f * omegas[j + 1]
    # cumulative rotations at grid nodes: R_cum[i] = R_(start -> grid[i])
    quats = [Rotation.identity().as_quat()]
    acc = Rotation.identity()
    for i in range(len(grid) - 1):
        dt = grid[i + 1] - grid[i]
        w_avg = 0.5 * (w_grid[i] + w_grid[i + 1])
        acc = acc * Rotation.from_rotvec(w_avg * dt)
        quats.append(acc.as_quat())
    R_cum = Rotation.from_quat(np.asarray(quats))
    R_end_inv = acc.inv()
    # advance from the enclosing grid node with the local (trapezoidal) rate
    uniq, inverse = np.unique(stamps, return_inverse=True)
    seg = np.clip(np.searchsorted(grid, uniq, side="right") - 1, 0, len(grid) - 2)
    dt = uniq - grid[seg]
    width = grid[seg + 1] - grid[seg]
    f = np.divide(dt, width, out=np.zeros_like(dt), where=width > 0)
    w_t = (1.0 - f)[:, None] * w_grid[seg] + f[:, None] * w_grid[seg + 1]
    w_avg = 0.5 * (w_grid[seg] + w_t)
    R_point = R_end_inv * (R_cum[seg] * Rotation.from_rotvec(w_avg * dt[:, None]))
    return R_point[inverse]


def motion_deskew(scan: PointCloud, imu: list[ImuSample],
                  scan_start: float, scan_end: float) -> PointCloud:
    """Rotate each point into the scan-end frame using integrated gyro rates.

    Points must carry timestamps within [scan_start, scan_end]. With no IMU
    samples the scan is returned unchanged (rotation-only correction; the
    translation over one sweep is ignored).
    """
    if scan.timestamps is None:
        raise ValueError("motion_deskew requires per-point timestamps")
    if len(scan) == 0:
        return scan.copy()
    stamps = scan.timestamps
    if stamps.min() < scan_start - 1e-9 or stamps.max() > scan_end + 1e-9:
        raise ValueError("point timestamps outside [scan_start, scan_end]")
    if not imu:
        return scan.copy()
    rots = _gyro_rotations(stamps, imu, scan_start, scan_end)
    out = scan.copy()
    out.points = rots.apply(scan.points)
    if scan.normals is not None:
        out.normals = rots.apply(scan.normals)
    return out


def merge_clouds(frames: list[tuple[LidarFeed, PointCloud]], now: float) -> PointCloud:
    """Concatenate healthy feeds in the body frame via their extrinsics.

    Feeds whose last message is older than their timeout are skipped; if all
    feeds are stale an empty cloud is returned rather than an error, so the
    downstream pipeline always receives a product.
    """
    if not frames:
        raise ValueError("merge_clouds requires at least one registered feed")
    parts = [se3_apply(feed.extrinsic, cloud)
             for feed, cloud in frames if feed.healthy(now)]
    return concat_clouds(parts, frame_id="body")


def body_filter(cloud: PointCloud, box_half_extents) -> PointCloud:
    """Drop points inside the closed robot-body box centered at the origin."""
    h = np.asarray(box_half_extents, dtype=np.float64).reshape(3)
    if np.any(h <= 0):
        raise ValueError("box half extents must be positive")
    inside = np.all(np.abs(cloud.points) <= h, axis=1)
    return cloud.select(~inside)


def voxel_downsample(cloud: PointCloud, d_leaf: float) -> PointCloud:
    """One centroid per occupied voxel cell; cell = floor(coord / d_leaf).

    Output order follows the lexicographic cell key, so the result does not
    depend on input point order.
    """
    if len(cloud) == 0:
        return cloud.copy()
    keys = np.floor(cloud.points / d_leaf).astype(np.int64)
    keys -= keys.min(axis=0)
    dims = keys.max(axis=0) + 1
    flat = (keys[:, 0] * dims[1] + keys[:, 1]) * dims[2] + keys[:, 2]
    uniq, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, cloud.points)
    centroids = sums / counts[:, None]
    stamps = None
    if cloud.timestamps is not None:
        ssum = np.zeros(len(uniq))
        np.add.at(ssum, inverse, cloud.timestamps)
        stamps = ssum / counts
    return PointCloud(points=centroids, timestamps=stamps, frame_id=cloud.frame_id)


def adaptive_voxel_filter(cloud: PointCloud, state: AdaptiveVoxelState
                          ) -> tuple[PointCloud, AdaptiveVoxelState]:
    """Voxel-downsample at the current leaf size, then adapt the leaf size.

    The post-filter count feeds the control law
    d_leaf <- clamp(d_leaf * (n_out / n_desired)**alpha, d_min, d_max),
    whose fixed point is n_out == n_desired. An empty cloud passes through
    with the state unchanged.
    """
    if len(cloud) == 0:
        return cloud.copy(), state
    filtered = voxel_downsample(cloud, state.d_leaf)
    n_out = len(filtered)
    d_new = state.d_leaf * (n_out / state.n_desired) ** state.alpha
    d_new = float(np.clip(d_new, state.d_min, state.d_max))
    return filtered, replace(state, d_leaf=d_new)
