"""On-disk dataset format: binary scans plus CSV streams.

Layout of a dataset directory:

    meta.json       feeds (id, extrinsic, timeout), lidar model, frame index
    scans/NNNNNN.bin  one file per (frame, feed): uint32 count, then count
                      little-endian float32 records x, y, z, t where t is
                      the per-point offset from the scan start in seconds
    imu.csv         t, wx, wy, wz, ax, ay, az
    gt.csv          t, tx, ty, tz, qx, qy, qz, qw    (optional)
    prior.csv       t, tx, ty, tz, qx, qy, qz, qw    (optional delta poses)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DatasetError
from .geometry import PointCloud, Pose
from .pipeline import ExternalPrior
from .preprocess import ImuSample, LidarFeed
from .simulate import LidarModel, TrajectorySample

FORMAT_VERSION = 1
FLOAT_FMT = "%.9g"


def _pose_to_json(pose: Pose) -> dict:
    q = Rotation.from_matrix(pose.rotation).as_quat()
    return {"t": [float(v) for v in pose.translation],
            "q": [float(v) for v in q]}


def _pose_from_json(d: dict) -> Pose:
    return Pose(Rotation.from_quat(d["q"]).as_matrix(), np.asarray(d["t"]))


def write_scan_bin(path: Path, cloud: PointCloud):
    stamps = cloud.timestamps
    if stamps is None:
        stamps = np.zeros(len(cloud))
    rec = np.empty((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points
    rec[:, 3] = stamps
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(cloud)))
        f.write(rec.tobytes())


def read_scan_bin(path: Path) -> PointCloud:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read scan file {path}: {exc}") from exc
    if len(raw) < 4:
        raise DatasetError(f"scan file {path} truncated")
    (count,) = struct.unpack_from("<I", raw, 0)
    need = 4 + count * 16
    if len(raw) < need:
        raise DatasetError(f"scan file {path}: expected {need} bytes, got {len(raw)}")
    rec = np.frombuffer(raw, dtype="<f4", count=count * 4, offset=4).reshape(-1, 4)
    return PointCloud(points=rec[:, :3].astype(np.float64),
                      timestamps=rec[:, 3].astype(np.float64))


def _write_traj_csv(path: Path, samples: list[TrajectorySample]):
    with open(path, "w") as f:
        f.write("t,tx,ty,tz,qx,qy,qz,qw\n")
        for s in samples:
            q = Rotation.from_matrix(s.pose.rotation).as_quat()
            vals = [s.timestamp, *s.pose.translation, *q]
            f.write(",".join(FLOAT_FMT % v for v in vals) + "\n")


def write_dataset(path, feeds: list[LidarFeed], lidar: LidarModel,
                  frames: list[tuple[float, dict]], imu: list[ImuSample],
                  gt: list[TrajectorySample] | None = None,
                  priors: list[tuple[float, ExternalPrior]] | None = None):
    """Write a dataset directory.

    ``frames`` is a list of (scan_end_stamp, {feed_id: PointCloud}) with
    per-point timestamps as offsets from the scan start.
    """
    root = Path(path)
    (root / "scans").mkdir(parents=True, exist_ok=True)
    counter = 0
    index = []
    for stamp, scans in frames:
        entry = {"stamp": float(stamp), "scans": {}}
        for feed_id, cloud in scans.items():
            rel = f"scans/{counter:06d}.bin"
            write_scan_bin(root / rel, cloud)
            entry["scans"][feed_id] = rel
            counter += 1
        index.append(entry)
    meta = {
        "format_version": FORMAT_VERSION,
        "lidar": {
            "channels": lidar.channels,
            "horizontal_resolution": lidar.horizontal_resolution,
            "vertical_fov": lidar.vertical_fov,
            "max_range": lidar.max_range,
            "scan_period": lidar.scan_period,
        },
        "feeds": [{"id": fd.id, "extrinsic": _pose_to_json(fd.extrinsic),
                   "timeout_s": fd.timeout} for fd in feeds],
        "frames": index,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(root / "imu.csv", "w") as f:
        f.write("t,wx,wy,wz,ax,ay,az\n")
        for s in imu:
            vals = [s.timestamp, *s.angular_velocity, *s.linear_acceleration]
            f.write(",".join(FLOAT_FMT % v for v in vals) + "\n")
    if gt:
        _write_traj_csv(root / "gt.csv", gt)
    if priors:
        samples = [TrajectorySample(t, p.delta) for t, p in priors]
        _write_traj_csv(root / "prior.csv", samples)


@dataclass
class Dataset:
    root: Path
    lidar: LidarModel
    feeds: list[LidarFeed]
    stamps: list[float]
    scan_files: list[dict]
    imu: list[ImuSample]
    gt: list[TrajectorySample] | None
    priors: dict[int, ExternalPrior]

    def __len__(self):
        return len(self.stamps)

    def frame(self, k: int):
        """(stamp, [(feed, cloud), ...], imu slice, prior) for frame k."""
        stamp = self.stamps[k]
        start = stamp - self.lidar.scan_period
        frames = []
        for fd in self.feeds:
            rel = self.scan_files[k].get(fd.id)
            if rel is None:
                continue
            cloud = read_scan_bin(self.root / rel)
            fd.last_msg_time = stamp
            frames.append((fd, cloud))
        imu = [s for s in self.imu if start - 0.05 <= s.timestamp <= stamp + 0.05]
        return stamp, frames, imu, self.priors.get(k)


def load_dataset(path) -> Dataset:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise DatasetError(f"{root}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{meta_path}: invalid JSON: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"{meta_path}: unsupported format_version "
                           f"{meta.get('format_version')!r}")
    try:
        lm = meta["lidar"]
        lidar = LidarModel(channels=int(lm["channels"]),
                           horizontal_resolution=float(lm["horizontal_resolution"]),
                           vertical_fov=float(lm["vertical_fov"]),
                           max_range=float(lm["max_range"]),
                           scan_period=float(lm["scan_period"]))
        feeds = [LidarFeed(fd["id"], _pose_from_json(fd["extrinsic"]),
                           timeout=float(fd["timeout_s"]))
                 for fd in meta["feeds"]]
        stamps = [float(fr["stamp"]) for fr in meta["frames"]]
        scan_files = [fr["scans"] for fr in meta["frames"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{meta_path}: malformed metadata: {exc}") from exc

    imu = []
    imu_path = root / "imu.csv"
    if imu_path.is_file():
        rows = np.loadtxt(imu_path, delimiter=",", skiprows=1, ndmin=2)
        if rows.size:
            if rows.shape[1] != 7:
                raise DatasetError(f"{imu_path}: expected 7 columns")
            imu = [ImuSample(r[0], r[1:4], r[4:7]) for r in rows]

    gt = None
    if (root / "gt.csv").is_file():
        from .evaluate import load_trajectory_csv
        gt = load_trajectory_csv(root / "gt.csv")

    priors: dict[int, ExternalPrior] = {}
    if (root / "prior.csv").is_file():
        from .evaluate import load_trajectory_csv
        entries = load_trajectory_csv(root / "prior.csv")
        by_stamp = {round(s.timestamp, 9): s.pose for s in entries}
        for k, stamp in enumerate(stamps):
            pose = by_stamp.get(round(stamp, 9))
            if pose is not None:
                priors[k] = ExternalPrior(delta=pose, source="dataset",
                                          timestamp=stamp)

    return Dataset(root=root, lidar=lidar, feeds=feeds, stamps=stamps,
                   scan_files=scan_files, imu=imu, gt=gt, priors=priors)
