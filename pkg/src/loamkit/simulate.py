"""Synthetic scenes, analytic lidar ray casting, and trajectory presets.

Primitives are solid boxes, infinite planes, and finite open cylinders, each
carrying a pose, so scenes are closed under rigid transforms. Intersections
are exact (no meshes): a scan from inside a box hits its interior faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import PointCloud, Pose

RAY_EPS = 1e-9


@dataclass
class Box:
    """Solid axis-aligned box in its local frame; ``extents`` are full side
    lengths. Rays from inside hit the interior of the far face."""

    pose: Pose
    extents: np.ndarray

    def __post_init__(self):
        self.extents = np.asarray(self.extents, dtype=np.float64).reshape(3)
        if np.any(self.extents <= 0):
            raise ValueError("box extents must be positive")


@dataclass
class Plane:
    """Infinite plane z=0 in its local frame, visible from both sides."""

    pose: Pose


@dataclass
class Cylinder:
    """Open cylinder around the local z axis (lateral surface only)."""

    pose: Pose
    radius: float
    half_length: float

    def __post_init__(self):
        if self.radius <= 0 or self.half_length <= 0:
            raise ValueError("cylinder radius and half_length must be positive")


Primitive = Box | Plane | Cylinder


@dataclass
class SceneSpec:
    primitives: list = field(default_factory=list)

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene must contain at least one primitive")


def transform_scene(scene: SceneSpec, pose: Pose) -> SceneSpec:
    """Scene with every primitive pose left-composed with ``pose``."""
    out = []
    for p in scene.primitives:
        if isinstance(p, Box):
            out.append(Box(pose @ p.pose, p.extents.copy()))
        elif isinstance(p, Plane):
            out.append(Plane(pose @ p.pose))
        else:
            out.append(Cylinder(pose @ p.pose, p.radius, p.half_length))
    return SceneSpec(out)


@dataclass(frozen=True)
class LidarModel:
    """Spinning-lidar geometry; defaults approximate a 16-channel unit."""

    channels: int = 16
    horizontal_resolution: float = np.deg2rad(0.9)
    vertical_fov: float = np.deg2rad(30.0)
    max_range: float = 30.0
    scan_period: float = 0.1

    def __post_init__(self):
        if self.max_range <= 0 or self.channels < 1:
            raise ValueError("max_range must be > 0 and channels >= 1")

    def ray_table(self):
        """(directions (m,3) in sensor frame, timestamps (m,) within scan).

        Azimuth-major layout; all channels of one column share a stamp, and
        stamps spread linearly with azimuth across the scan period.
        """
        n_az = max(int(round(2.0 * np.pi / self.horizontal_resolution)), 1)
        az = np.arange(n_az) * (2.0 * np.pi / n_az)
        if self.channels == 1:
            elev = np.zeros(1)
        else:
            elev = np.linspace(-0.5 * self.vertical_fov, 0.5 * self.vertical_fov,
                               self.channels)
        ce, se = np.cos(elev), np.sin(elev)
        ca, sa = np.cos(az), np.sin(az)
        dirs = np.empty((n_az, self.channels, 3))
        dirs[:, :, 0] = ca[:, None] * ce[None, :]
        dirs[:, :, 1] = sa[:, None] * ce[None, :]
        dirs[:, :, 2] = se[None, :]
        stamps = np.repeat(az / (2.0 * np.pi) * self.scan_period, self.channels)
        return dirs.reshape(-1, 3), stamps


def _ray_box(o, d, box: Box) -> np.ndarray:
    R, t = box.pose.rotation, box.pose.translation
    ol = (o - t) @ R
    dl = d @ R
    h = 0.5 * box.extents
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - ol) / dl
        t2 = (h - ol) / dl
    near = np.fmin(t1, t2)
    far = np.fmax(t1, t2)
    # rays parallel to a slab miss unless the origin lies inside it
    par = np.abs(dl) < 1e-300
    inside = np.abs(ol) <= h
    near[par] = np.where(inside[par], -np.inf, np.inf)
    far[par] = np.where(inside[par], np.inf, -np.inf)
    tmin = near.max(axis=1)
    tmax = far.min(axis=1)
    hit = (tmax >= tmin) & (tmax > RAY_EPS)
    t_hit = np.where(tmin > RAY_EPS, tmin, tmax)
    return np.where(hit, t_hit, np.inf)


def _ray_plane(o, d, plane: Plane) -> np.ndarray:
    R, t = plane.pose.rotation, plane.pose.translation
    oz = (o - t) @ R[:, 2]
    dz = d @ R[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        th = -oz / dz
    th = np.where(np.abs(dz) < 1e-300, np.inf, th)
    return np.where(th > RAY_EPS, th, np.inf)


def _ray_cylinder(o, d, cyl: Cylinder) -> np.ndarray:
    R, t = cyl.pose.rotation, cyl.pose.translation
    ol = (o - t) @ R
    dl = d @ R
    a = dl[:, 0] ** 2 + dl[:, 1] ** 2
    b = 2.0 * (ol[:, 0] * dl[:, 0] + ol[:, 1] * dl[:, 1])
    c = ol[:, 0] ** 2 + ol[:, 1] ** 2 - cyl.radius ** 2
    disc = b * b - 4.0 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
    miss = (disc < 0.0) | (a < 1e-300)
    best = np.full(len(o), np.inf)
    for troot in (t0, t1):
        z = ol[:, 2] + troot * dl[:, 2]
        ok = (~miss) & (troot > RAY_EPS) & (np.abs(z) <= cyl.half_length)
        best = np.where(ok & (troot < best), troot, best)
    return best


def simulate_scan(scene: SceneSpec, pose: Pose, lidar: LidarModel) -> PointCloud:
    """Cast one full sweep from ``pose``; points come back in the sensor
    frame with per-point timestamps spread across the scan period."""
    dirs_s, stamps = lidar.ray_table()
    o = np.broadcast_to(pose.translation, dirs_s.shape)
    d = dirs_s @ pose.rotation.T
    t_best = np.full(len(dirs_s), np.inf)
    for prim in scene.primitives:
        if isinstance(prim, Box):
            t_p = _ray_box(o, d, prim)
        elif isinstance(prim, Plane):
            t_p = _ray_plane(o, d, prim)
        else:
            t_p = _ray_cylinder(o, d, prim)
        t_best = np.minimum(t_best, t_p)
    hit = t_best <= lidar.max_range
    pts = dirs_s[hit] * t_best[hit, None]
    return PointCloud(points=pts, timestamps=stamps[hit], frame_id="sensor")


@dataclass(frozen=True)
class TrajectorySample:
    timestamp: float
    pose: Pose


def _yaw_pose(x: float, y: float, z: float, yaw: float) -> Pose:
    c, s = np.cos(yaw), np.sin(yaw)
    return Pose(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]),
                np.array([x, y, z]))


def _rounded_rectangle(perimeter_pos, half_w, half_h, corner_r):
    """Point and heading on a rounded rectangle at arc position s (ccw)."""
    sw = 2.0 * (half_w - corner_r)
    sh = 2.0 * (half_h - corner_r)
    arc = 0.5 * np.pi * corner_r
    total = 2.0 * sw + 2.0 * sh + 4.0 * arc
    s = np.mod(perimeter_pos, total)
    segs = [sw, arc, sh, arc, sw, arc, sh, arc]
    starts = np.cumsum([0.0] + segs[:-1])
    for i, (s0, ln) in enumerate(zip(starts, segs)):
        if s <= s0 + ln + 1e-12:
            u = s - s0
            break
    if i == 0:
        return (-half_w + corner_r + u, -half_h, 0.0)
    if i == 1:
        a = u / corner_r
        return (half_w - corner_r + corner_r * np.sin(a),
                -half_h + corner_r - corner_r * np.cos(a), a)
    if i == 2:
        return (half_w, -half_h + corner_r + u, 0.5 * np.pi)
    if i == 3:
        a = u / corner_r
        return (half_w - corner_r + corner_r * np.cos(a),
                half_h - corner_r + corner_r * np.sin(a), 0.5 * np.pi + a)
    if i == 4:
        return (half_w - corner_r - u, half_h, np.pi)
    if i == 5:
        a = u / corner_r
        return (-half_w + corner_r - corner_r * np.sin(a),
                half_h - corner_r + corner_r * np.cos(a), np.pi + a)
    if i == 6:
        return (-half_w, half_h - corner_r - u, 1.5 * np.pi)
    a = u / corner_r
    return (-half_w + corner_r - corner_r * np.cos(a),
            -half_h + corner_r - corner_r * np.sin(a), 1.5 * np.pi + a)


def trajectory_static(frames: int, rate: float = 10.0, pose: Pose | None = None):
    pose = pose or Pose.identity()
    return [TrajectorySample(k / rate, pose) for k in range(frames)]


def trajectory_line(frames: int, rate: float = 10.0, speed: float = 1.0,
                    z: float = 0.0):
    return [TrajectorySample(k / rate, _yaw_pose(speed * k / rate, 0.0, z, 0.0))
            for k in range(frames)]


def trajectory_loop(frames: int, rate: float = 10.0, speed: float = 1.0,
                    half_w: float = 8.0, half_h: float = 4.5,
                    corner_r: float = 1.5, z: float = 0.0):
    out = []
    for k in range(frames):
        t = k / rate
        x, y, yaw = _rounded_rectangle(speed * t, half_w, half_h, corner_r)
        out.append(TrajectorySample(t, _yaw_pose(x, y, z, yaw)))
    return out


def trajectory_figure_eight(frames: int, rate: float = 10.0, speed: float = 1.0,
                            a: float = 7.0, b: float = 4.0, z: float = 0.0):
    # Gerono lemniscate scaled to roughly unit speed in the phase parameter
    scale = np.hypot(a, b)
    out = []
    for k in range(frames):
        t = k / rate
        s = speed * t / scale
        x = a * np.sin(s)
        y = b * np.sin(s) * np.cos(s)
        dx = a * np.cos(s)
        dy = b * np.cos(2.0 * s)
        out.append(TrajectorySample(t, _yaw_pose(x, y, z, np.arctan2(dy, dx))))
    return out


def make_imu(traj: list[TrajectorySample], rate: float = 50.0,
             gravity: float = 9.81):
    """Synthetic gyro/accelerometer stream along a trajectory.

    Body rates come from relative rotations between interpolated samples;
    specific force is the body-frame acceleration minus gravity. Returns a
    list of ImuSample covering [t0, t_end].
    """
    from .preprocess import ImuSample

    t0, t1 = traj[0].timestamp, traj[-1].timestamp
    times = np.array([s.timestamp for s in traj])
    n = max(int(np.ceil((t1 - t0) * rate)) + 1, 2)
    grid = np.linspace(t0, t1, n)

    def pose_at(t):
        i = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(traj) - 2)
        a, b = traj[i], traj[i + 1]
        if b.timestamp == a.timestamp:
            return a.pose
        f = (t - a.timestamp) / (b.timestamp - a.timestamp)
        ra = Rotation.from_matrix(a.pose.rotation)
        rb = Rotation.from_matrix(b.pose.rotation)
        rot = (ra * Rotation.from_rotvec(f * (ra.inv() * rb).as_rotvec())).as_matrix()
        return Pose(rot, (1 - f) * a.pose.translation + f * b.pose.translation)

    dt = grid[1] - grid[0] if n > 1 else 1.0 / rate
    poses = [pose_at(t) for t in grid]
    out = []
    g_vec = np.array([0.0, 0.0, -gravity])
    for i, t in enumerate(grid):
        lo = max(i - 1, 0)
        hi = min(i + 1, n - 1)
        span = max(grid[hi] - grid[lo], 1e-9)
        rv = Rotation.from_matrix(poses[lo].rotation.T @ poses[hi].rotation).as_rotvec()
        omega = rv / span
        if 0 < i < n - 1:
            a_world = (poses[i + 1].translation - 2.0 * poses[i].translation
                       + poses[i - 1].translation) / (dt * dt)
        else:
            a_world = np.zeros(3)
        f_body = poses[i].rotation.T @ (a_world - g_vec)
        out.append(ImuSample(float(t), omega, f_body))
    return out


def scene_room(width: float = 20.0, depth: float = 16.0, height: float = 6.0,
               n_boxes: int = 8, n_cylinders: int = 3, seed: int = 0) -> SceneSpec:
    """Closed room with scattered boxes and pillars; rich for registration."""
    rng = np.random.default_rng(seed)
    prims: list = [Box(Pose(np.eye(3), [0, 0, height / 2]),
                       [width, depth, height])]
    for _ in range(n_boxes):
        ext = rng.uniform(0.5, 2.2, size=3)
        x = rng.uniform(-width / 2 + 2, width / 2 - 2)
        y = rng.uniform(-depth / 2 + 2, depth / 2 - 2)
        yaw = rng.uniform(0, 2 * np.pi)
        prims.append(Box(_yaw_pose(x, y, ext[2] / 2, yaw), ext))
    for _ in range(n_cylinders):
        r = rng.uniform(0.15, 0.45)
        x = rng.uniform(-width / 2 + 2, width / 2 - 2)
        y = rng.uniform(-depth / 2 + 2, depth / 2 - 2)
        prims.append(Cylinder(Pose(np.eye(3), [x, y, height / 2]), r, height / 2))
    return SceneSpec(prims)


def scene_corridor(length: float = 30.0, width: float = 5.0, height: float = 3.5,
                   margin: float = 2.0, obstacle_spacing: float = 1.2,
                   seed: int = 0) -> SceneSpec:
    """Straight corridor along +x lined with obliquely yawed wall fixtures.

    The yawed faces keep forward motion observable everywhere; end walls
    sit ``margin`` beyond the [0, length] working section.
    """
    rng = np.random.default_rng(seed)
    shell_len = length + 2 * margin
    prims: list = [Box(Pose(np.eye(3), [length / 2, 0, height / 2]),
                       [shell_len, width, height])]
    x = 0.0
    side = 1
    while x < length:
        ext = rng.uniform([0.35, 0.3, 0.6], [1.1, 0.8, 2.4])
        y = side * (width / 2 - ext[1] / 2 - rng.uniform(0.0, 0.3))
        yaw = rng.uniform(-0.7, 0.7)
        prims.append(Box(_yaw_pose(x, y, ext[2] / 2, yaw), ext))
        side = -side
        x += obstacle_spacing * rng.uniform(0.8, 1.2)
    return SceneSpec(prims)


def scene_loop(half_w: float = 8.0, half_h: float = 4.5, corridor: float = 3.0,
               height: float = 3.5, obstacle_spacing: float = 3.0,
               seed: int = 0) -> SceneSpec:
    """Rectangular ring corridor: outer shell, inner block, wall fixtures.

    ``half_w``/``half_h`` describe the centerline rectangle the loop
    trajectory follows; walls sit half a corridor width outside/inside it.
    """
    rng = np.random.default_rng(seed)
    out_w = 2 * half_w + corridor
    out_h = 2 * half_h + corridor
    in_w = 2 * half_w - corridor
    in_h = 2 * half_h - corridor
    prims: list = [
        Box(Pose(np.eye(3), [0, 0, height / 2]), [out_w, out_h, height]),
        Box(Pose(np.eye(3), [0, 0, height / 2]), [in_w, in_h, height]),
    ]
    per = 2 * (in_w + in_h)
    s = 0.0
    while s < per:
        u = np.mod(s, per)
        if u < in_w:
            x, y, yaw = -in_w / 2 + u, -in_h / 2, 0.0
        elif u < in_w + in_h:
            x, y, yaw = in_w / 2, -in_h / 2 + (u - in_w), np.pi / 2
        elif u < 2 * in_w + in_h:
            x, y, yaw = in_w / 2 - (u - in_w - in_h), in_h / 2, 0.0
        else:
            x, y, yaw = -in_w / 2, in_h / 2 - (u - 2 * in_w - in_h), np.pi / 2
        ext = rng.uniform([0.3, 0.25, 0.5], [0.8, 0.5, 2.0])
        prims.append(Box(_yaw_pose(x, y, ext[2] / 2, yaw), ext))
        s += obstacle_spacing * rng.uniform(0.8, 1.25)
    return SceneSpec(prims)
