import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loamkit.geometry import PointCloud, Pose
from loamkit.preprocess import (AdaptiveVoxelState, ImuSample, LidarFeed,
                                adaptive_voxel_filter, body_filter,
                                merge_clouds, motion_deskew, voxel_downsample)


def imu_const_yaw(w, t0=0.0, t1=0.1, n=11):
    return [ImuSample(t, [0, 0, w], [0, 0, 9.81])
            for t in np.linspace(t0, t1, n)]


class TestDeskew:
    def test_zero_rate_identity(self):
        scan = PointCloud(points=[[1, 2, 3], [4, 5, 6]], timestamps=[0.0, 0.05])
        out = motion_deskew(scan, imu_const_yaw(0.0), 0.0, 0.1)
        assert np.allclose(out.points, scan.points, atol=1e-15)

    def test_constant_yaw_closed_form(self):
        w = 0.7
        scan = PointCloud(points=[[1.0, 0.0, 0.0]], timestamps=[0.0])
        out = motion_deskew(scan, imu_const_yaw(w), 0.0, 0.1)
        ang = -w * 0.1
        expected = [np.cos(ang), np.sin(ang), 0.0]
        assert np.abs(out.points[0] - expected).max() < 1e-12

    def test_scan_end_points_unchanged(self):
        scan = PointCloud(points=[[3.0, -1.0, 0.5]], timestamps=[0.1])
        out = motion_deskew(scan, imu_const_yaw(1.3), 0.0, 0.1)
        assert np.allclose(out.points, scan.points, atol=1e-15)

    def test_empty_imu_identity(self):
        scan = PointCloud(points=[[1, 0, 0]], timestamps=[0.02])
        out = motion_deskew(scan, [], 0.0, 0.1)
        assert np.array_equal(out.points, scan.points)

    def test_requires_timestamps(self):
        with pytest.raises(ValueError):
            motion_deskew(PointCloud(points=[[0, 0, 0]]), [], 0.0, 0.1)

    def test_rejects_out_of_range_stamps(self):
        scan = PointCloud(points=[[1, 0, 0]], timestamps=[0.2])
        with pytest.raises(ValueError):
            motion_deskew(scan, imu_const_yaw(0.1), 0.0, 0.1)

    def test_varying_rate_matches_numeric_integration(self):
        # ramping yaw rate; compare against dense numerical integration
        times = np.linspace(0.0, 0.1, 51)
        imu = [ImuSample(t, [0, 0, 5.0 * t], [0, 0, 9.81]) for t in times]
        scan = PointCloud(points=[[1.0, 0.0, 0.0]], timestamps=[0.0])
        out = motion_deskew(scan, imu, 0.0, 0.1)
        # integral of w dt from 0 to 0.1 of 5t = 0.025 rad
        ang = -0.025
        expected = [np.cos(ang), np.sin(ang), 0.0]
        assert np.abs(out.points[0] - expected).max() < 1e-6


class TestMerge:
    def make_feeds(self):
        f1 = LidarFeed("a", Pose.identity(), last_msg_time=10.0, timeout=0.5)
        f2 = LidarFeed("b", Pose(np.eye(3), [1.0, 0, 0]), last_msg_time=10.0, timeout=0.5)
        return f1, f2

    def test_single_healthy_identity(self, rng):
        f1, _ = self.make_feeds()
        cloud = PointCloud(points=rng.random((10, 3)))
        out = merge_clouds([(f1, cloud)], now=10.0)
        assert np.array_equal(out.points, cloud.points)

    def test_stale_feed_skipped(self, rng):
        f1, f2 = self.make_feeds()
        f2.last_msg_time = 8.9  # stale by more than 2x timeout
        c1 = PointCloud(points=rng.random((100, 3)))
        c2 = PointCloud(points=rng.random((200, 3)))
        out = merge_clouds([(f1, c1), (f2, c2)], now=10.0)
        assert len(out) == 100

    def test_sizes_add_up(self, rng):
        f1, f2 = self.make_feeds()
        f3 = LidarFeed("c", Pose.identity(), last_msg_time=10.0, timeout=0.5)
        clouds = [PointCloud(points=rng.random((n, 3))) for n in (100, 200, 300)]
        out = merge_clouds(list(zip((f1, f2, f3), clouds)), now=10.0)
        assert len(out) == 600

    def test_extrinsic_applied(self):
        _, f2 = self.make_feeds()
        out = merge_clouds([(f2, PointCloud(points=[[0.0, 0, 0]]))], now=10.0)
        assert np.allclose(out.points, [[1, 0, 0]])

    def test_all_stale_returns_empty(self, rng):
        f1, f2 = self.make_feeds()
        out = merge_clouds([(f1, PointCloud(points=rng.random((5, 3)))),
                            (f2, PointCloud(points=rng.random((7, 3))))], now=99.0)
        assert len(out) == 0

    def test_permutation_invariant_sets(self, rng):
        f1, f2 = self.make_feeds()
        c1 = PointCloud(points=rng.random((10, 3)))
        c2 = PointCloud(points=rng.random((20, 3)))
        a = merge_clouds([(f1, c1), (f2, c2)], now=10.0)
        b = merge_clouds([(f2, c2), (f1, c1)], now=10.0)
        assert np.array_equal(np.sort(a.points.ravel()), np.sort(b.points.ravel()))

    def test_no_feeds_error(self):
        with pytest.raises(ValueError):
            merge_clouds([], now=0.0)


class TestBodyFilter:
    def test_origin_removed(self):
        out = body_filter(PointCloud(points=[[0.0, 0, 0]]), [1, 1, 1])
        assert len(out) == 0

    def test_outside_kept(self):
        out = body_filter(PointCloud(points=[[2.0, 0, 0]]), [1, 1, 1])
        assert len(out) == 1

    def test_boundary_removed_closed_box(self):
        out = body_filter(PointCloud(points=[[1.0, 0, 0]]), [1, 1, 1])
        assert len(out) == 0

    def test_order_preserved(self, rng):
        pts = rng.random((100, 3)) * 4 - 2
        cloud = PointCloud(points=pts)
        out = body_filter(cloud, [1, 1, 1])
        keep = ~np.all(np.abs(pts) <= 1, axis=1)
        assert np.array_equal(out.points, pts[keep])

    def test_rejects_bad_extents(self):
        with pytest.raises(ValueError):
            body_filter(PointCloud(points=[[0, 0, 0]]), [0, 1, 1])


class TestVoxelDownsample:
    def test_one_point_per_cell(self, rng):
        pts = rng.random((5000, 3)) * 4
        out = voxel_downsample(PointCloud(points=pts), 0.5)
        keys = np.floor(out.points / 0.5).astype(int)
        uniq = np.unique(keys, axis=0)
        assert len(uniq) == len(out)
        assert len(out) <= len(pts)

    def test_centroid_is_order_independent(self, rng):
        pts = rng.random((1000, 3))
        perm = rng.permutation(1000)
        a = voxel_downsample(PointCloud(points=pts), 0.25)
        b = voxel_downsample(PointCloud(points=pts[perm]), 0.25)
        assert np.allclose(a.points, b.points, atol=1e-12)


class TestAdaptiveVoxel:
    def test_direct_formula(self, rng):
        # construct: with a huge box the output count is predictable only via
        # the formula; assert d update uses the measured output count
        cloud = PointCloud(points=rng.random((5000, 3)) * 10)
        st_ = AdaptiveVoxelState(d_leaf=0.25, n_desired=1000, alpha=1.0)
        out, st2 = adaptive_voxel_filter(cloud, st_)
        expect = np.clip(0.25 * len(out) / 1000.0, st_.d_min, st_.d_max)
        assert abs(st2.d_leaf - expect) < 1e-15

    def test_fixed_point(self):
        # exactly n_desired occupied cells -> leaf unchanged
        side = 10
        xs, ys = np.meshgrid(np.arange(side), np.arange(side))
        pts = np.c_[xs.ravel() + 0.5, ys.ravel() + 0.5, np.full(side * side, 0.5)]
        st_ = AdaptiveVoxelState(d_leaf=1.0, n_desired=side * side, alpha=1.0)
        out, st2 = adaptive_voxel_filter(PointCloud(points=pts), st_)
        assert len(out) == side * side
        assert st2.d_leaf == st_.d_leaf

    def test_monotonicity(self, rng):
        cloud = PointCloud(points=rng.random((20000, 3)) * 8)
        st_ = AdaptiveVoxelState(d_leaf=0.3, n_desired=1000, alpha=1.0)
        out, st2 = adaptive_voxel_filter(cloud, st_)
        if len(out) > 1000:
            assert st2.d_leaf > st_.d_leaf
        st3 = AdaptiveVoxelState(d_leaf=0.3, n_desired=10 ** 6, alpha=1.0)
        _, st4 = adaptive_voxel_filter(cloud, st3)
        assert st4.d_leaf < st3.d_leaf  # count < desired shrinks the leaf

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.05, 1.5), st.integers(100, 5000))
    def test_clamps_hold(self, d0, n_desired):
        rng = np.random.default_rng(7)
        cloud = PointCloud(points=rng.random((3000, 3)) * 6)
        st_ = AdaptiveVoxelState(d_leaf=d0, n_desired=n_desired, alpha=1.0)
        _, st2 = adaptive_voxel_filter(cloud, st_)
        assert st_.d_min <= st2.d_leaf <= st_.d_max

    def test_empty_cloud_passthrough(self):
        st_ = AdaptiveVoxelState()
        out, st2 = adaptive_voxel_filter(PointCloud.empty(), st_)
        assert len(out) == 0 and st2 == st_

    def test_state_validation(self):
        with pytest.raises(ValueError):
            AdaptiveVoxelState(d_leaf=0.005, d_min=0.01)
        with pytest.raises(ValueError):
            AdaptiveVoxelState(alpha=0.0)
        with pytest.raises(ValueError):
            AdaptiveVoxelState(n_desired=0)
