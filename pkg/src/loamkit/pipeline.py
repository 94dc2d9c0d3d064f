"""The odometry dataflow: preprocess, scan-to-scan, scan-to-submap, map update.

One ``LidarOdometry`` instance owns the state for one robot stream. Each
frame runs de-skew per feed, the merge/body/adaptive-voxel chain, normal
estimation, a GICP solve against the previous scan (seeded by an external
prior when available), a GICP refinement against the sliding map (seeded by
the scan-to-scan composition and protected by the rotational gate), then the
map insert and window slide. The pipeline always emits a pose: registration
failures fall back to the prior delta, then constant velocity, then holding.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, Pose, se3_apply
from .mapping import MapStore, make_map_store
from .normals import estimate_normals
from .preprocess import (AdaptiveVoxelState, ImuSample, LidarFeed,
                         adaptive_voxel_filter, body_filter, merge_clouds,
                         motion_deskew)
from .registration import (MIN_SOURCE_POINTS, CloudTarget, GicpConfig,
                           gicp_align, rotational_gate)


@dataclass(frozen=True)
class ExternalPrior:
    """Delta pose since the previous scan from a non-lidar source."""

    delta: Pose
    source: str = "external"
    timestamp: float = 0.0


@dataclass
class PipelineConfig:
    # preprocessing
    deskew: bool = True
    scan_duration: float = 0.1
    body_box: tuple = (0.6, 0.6, 0.4)
    n_desired: int = 2000
    alpha: float = 1.0
    d_init: float = 0.25
    d_min: float = 0.01
    d_max: float = 2.0
    normal_k: int = 10
    # sliding map
    map_backend: str = "ikd"
    window_half_extent_m: float = 25.0
    slide_margin_m: float | None = None
    octree_leaf_m: float = 0.01
    map_sync_slides: bool = True
    # registration
    gicp: GicpConfig = field(default_factory=GicpConfig)

    def initial_voxel_state(self) -> AdaptiveVoxelState:
        return AdaptiveVoxelState(d_leaf=self.d_init, n_desired=self.n_desired,
                                  d_min=self.d_min, d_max=self.d_max,
                                  alpha=self.alpha)


@dataclass
class FrameReport:
    frame_index: int
    stamp: float
    pose: Pose
    degraded: bool = False
    bootstrap: bool = False
    fallback: str = "none"          # none | prior | constant_velocity | hold
    n_raw: int = 0
    n_merged: int = 0
    n_filtered: int = 0
    n_valid_normals: int = 0
    d_leaf: float = 0.0
    s2s_converged: bool = False
    s2s_iterations: int = 0
    s2s_fitness: float = float("nan")
    s2m_attempted: bool = False
    s2m_converged: bool = False
    s2m_iterations: int = 0
    s2m_fitness: float = float("nan")
    s2m_rotation_change: float = float("nan")
    gate_accepted: bool = False
    gate_streak: int = 0
    slid: bool = False
    map_alive: int = 0
    map_allocated: int = 0
    map_bytes: int = 0
    t_callback: float = 0.0
    t_scan_to_scan: float = 0.0
    t_scan_to_submap: float = 0.0
    odometry_delay: float = 0.0


class LidarOdometry:
    """Single-stream odometry pipeline; not reentrant per instance."""

    def __init__(self, config: PipelineConfig | None = None):
        self.cfg = config or PipelineConfig()
        self.pose = Pose.identity()
        self.initialized = False
        self.frame_index = 0
        self.voxel_state = self.cfg.initial_voxel_state()
        self.map: MapStore | None = None
        self._prev_target: CloudTarget | None = None
        self._prev_delta = Pose.identity()
        self.gate_streak = 0

    def bootstrap(self, initial_pose: Pose | None = None):
        """Set the initial pose and center the map window on it."""
        if self.initialized:
            raise ValueError("pipeline already initialized")
        self.pose = initial_pose or Pose.identity()
        self.map = make_map_store(self.cfg.map_backend,
                                  center=self.pose.translation,
                                  half_extent=self.cfg.window_half_extent_m,
                                  slide_margin=self.cfg.slide_margin_m,
                                  octree_leaf=self.cfg.octree_leaf_m,
                                  sync_slides=self.cfg.map_sync_slides)
        self.initialized = True

    def close(self):
        if self.map is not None:
            self.map.close()

    # -- frame processing ----------------------------------------------------

    def _preprocess(self, raw_frames, imu, now):
        cfg = self.cfg
        processed = []
        for feed, cloud in raw_frames:
            if cfg.deskew and imu and cloud.timestamps is not None and len(cloud):
                start = now - cfg.scan_duration
                cloud = motion_deskew(cloud, imu, start, now)
            processed.append((feed, cloud))
        merged = merge_clouds(processed, now)
        filtered = body_filter(merged, cfg.body_box) if len(merged) else merged
        return merged, filtered

    def _degraded_report(self, report: FrameReport, prior: ExternalPrior | None) -> FrameReport:
        report.degraded = True
        if prior is not None:
            self.pose = (self.pose @ prior.delta).renormalized()
            self._prev_delta = prior.delta
            report.fallback = "prior"
        else:
            report.fallback = "hold"
        report.pose = self.pose
        self._fill_map_stats(report)
        return report

    def _fill_map_stats(self, report: FrameReport):
        if self.map is not None:
            stats = self.map.memory_stats()
            report.map_alive = stats.alive
            report.map_allocated = stats.allocated
            report.map_bytes = stats.bytes_estimate

    def process_scan(self, raw_frames, imu: list[ImuSample] | None = None,
                     prior: ExternalPrior | None = None,
                     now: float = 0.0) -> FrameReport:
        """Run one frame through the full pipeline; returns its report.

        ``raw_frames`` is a list of (LidarFeed, PointCloud) in sensor frames;
        ``now`` is the scan-end timestamp on the dataset clock.
        """
        t0 = time.perf_counter()
        cfg = self.cfg
        if not self.initialized:
            self.bootstrap()
        report = FrameReport(frame_index=self.frame_index, stamp=now, pose=self.pose)
        self.frame_index += 1

        merged, filtered = self._preprocess(raw_frames, imu or [], now)
        report.n_raw = sum(len(c) for _, c in raw_frames)
        report.n_merged = len(merged)
        if len(filtered) < max(cfg.normal_k + 1, MIN_SOURCE_POINTS):
            report.t_callback = time.perf_counter() - t0
            report.odometry_delay = report.t_callback
            return self._degraded_report(report, prior)

        vox, self.voxel_state = adaptive_voxel_filter(filtered, self.voxel_state)
        report.n_filtered = len(vox)
        report.d_leaf = self.voxel_state.d_leaf
        if len(vox) < max(cfg.normal_k + 1, MIN_SOURCE_POINTS):
            report.t_callback = time.perf_counter() - t0
            report.odometry_delay = report.t_callback
            return self._degraded_report(report, prior)
        scan = estimate_normals(vox, k=cfg.normal_k, viewpoint=(0.0, 0.0, 0.0))
        report.n_valid_normals = int(scan.normal_valid.sum())

        if self._prev_target is None:
            # first frame: establish the map and the scan-to-scan target
            self._finish_frame(scan, report, slid=False)
            report.bootstrap = True
            report.gate_accepted = True
            report.t_callback = time.perf_counter() - t0
            report.odometry_delay = report.t_callback
            return report

        # scan-to-scan: delta from the current scan frame to the previous one
        seed_s2s = prior.delta if prior is not None else Pose.identity()
        t_s2s = time.perf_counter()
        fallback = "none"
        try:
            res_s2s = gicp_align(scan, self._prev_target, seed_s2s, cfg.gicp)
        except ValueError:
            res_s2s = None
        report.t_scan_to_scan = time.perf_counter() - t_s2s
        if res_s2s is not None and res_s2s.converged:
            delta = res_s2s.pose
            report.s2s_converged = True
            report.s2s_iterations = res_s2s.iterations
            report.s2s_fitness = res_s2s.fitness
        else:
            if res_s2s is not None:
                report.s2s_iterations = res_s2s.iterations
                report.s2s_fitness = res_s2s.fitness
            if prior is not None:
                delta, fallback = prior.delta, "prior"
            else:
                delta, fallback = self._prev_delta, "constant_velocity"
        pose_pred = (self.pose @ delta).renormalized()

        # scan-to-submap refinement against the sliding map
        pose_new = pose_pred
        gate_ok = False
        t_s2m = time.perf_counter()
        if len(self.map) >= MIN_SOURCE_POINTS:
            report.s2m_attempted = True
            try:
                res_s2m = gicp_align(scan, self.map, pose_pred, cfg.gicp)
            except ValueError:
                res_s2m = None
            if res_s2m is not None:
                report.s2m_converged = res_s2m.converged
                report.s2m_iterations = res_s2m.iterations
                report.s2m_fitness = res_s2m.fitness
                report.s2m_rotation_change = res_s2m.rotation_change
                if res_s2m.converged and rotational_gate(res_s2m, cfg.gicp):
                    pose_new = res_s2m.pose
                    gate_ok = True
        report.t_scan_to_submap = time.perf_counter() - t_s2m
        self.gate_streak = 0 if gate_ok else self.gate_streak + 1
        report.gate_accepted = gate_ok
        report.gate_streak = self.gate_streak

        pose_new = pose_new.renormalized()
        self._prev_delta = self.pose.inverse() @ pose_new
        self.pose = pose_new
        report.pose = pose_new
        report.fallback = fallback

        slid = self._finish_frame(scan, report, slid=False)
        report.slid = slid
        report.t_callback = time.perf_counter() - t0
        report.odometry_delay = report.t_callback
        return report

    def _finish_frame(self, scan: PointCloud, report: FrameReport, slid: bool) -> bool:
        """Insert the scan into the map in world frame and slide the window."""
        valid = scan.select(scan.normal_valid)
        world = se3_apply(self.pose, valid)
        self.map.insert_scan(world)
        slid = self.map.slide_window(self.pose.translation)
        self._prev_target = CloudTarget(scan)
        self._fill_map_stats(report)
        report.pose = self.pose
        return slid
