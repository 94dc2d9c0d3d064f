import numpy as np
import pytest

from loamkit.geometry import Pose, se3_apply, se3_exp
from loamkit.index import StaticKdTree
from loamkit.simulate import (Box, Cylinder, LidarModel, Plane, SceneSpec,
                              make_imu, scene_corridor, scene_loop, scene_room,
                              simulate_scan, trajectory_figure_eight,
                              trajectory_line, trajectory_loop,
                              trajectory_static, transform_scene)


def axis_lidar():
    return LidarModel(channels=1, horizontal_resolution=np.pi / 2,
                      vertical_fov=0.0, max_range=30.0)


class TestRayCasting:
    def test_cube_interior_axis_rays(self):
        scene = SceneSpec([Box(Pose.identity(), [10.0, 10.0, 10.0])])
        scan = simulate_scan(scene, Pose.identity(), axis_lidar())
        r = np.linalg.norm(scan.points, axis=1)
        assert len(scan) == 4
        assert np.abs(r - 5.0).max() < 1e-12

    def test_floor_plane_45_degrees(self):
        scene = SceneSpec([Plane(Pose.identity())])
        lidar = LidarModel(channels=2, horizontal_resolution=np.pi / 2,
                           vertical_fov=np.pi / 2, max_range=30.0)
        scan = simulate_scan(scene, Pose(np.eye(3), [0, 0, 1.0]), lidar)
        r = np.linalg.norm(scan.points, axis=1)
        # only the downward-facing channel hits
        assert np.abs(r - np.sqrt(2.0)).max() < 1e-12

    def test_cylinder_hit_radius(self):
        scene = SceneSpec([Cylinder(Pose(np.eye(3), [5.0, 0.0, 0.0]), 1.0, 4.0)])
        scan = simulate_scan(scene, Pose.identity(), axis_lidar())
        r = np.linalg.norm(scan.points, axis=1)
        assert len(scan) == 1
        assert abs(r[0] - 4.0) < 1e-12  # nearest lateral surface point

    def test_no_hits_empty_cloud(self):
        scene = SceneSpec([Box(Pose(np.eye(3), [100.0, 0, 0]), [1, 1, 1])])
        scan = simulate_scan(scene, Pose.identity(),
                             LidarModel(channels=1, horizontal_resolution=np.pi / 2,
                                        vertical_fov=0.0, max_range=5.0))
        assert len(scan) == 0

    def test_max_range_cut(self):
        scene = SceneSpec([Box(Pose.identity(), [100.0, 100.0, 100.0])])
        lidar = LidarModel(channels=1, horizontal_resolution=np.pi / 2,
                           vertical_fov=0.0, max_range=10.0)
        scan = simulate_scan(scene, Pose.identity(), lidar)
        assert len(scan) == 0  # interior walls 50 m away, beyond range

    def test_timestamps_linear_in_azimuth(self):
        scene = SceneSpec([Box(Pose.identity(), [10.0, 10.0, 10.0])])
        lidar = LidarModel(channels=2, horizontal_resolution=np.deg2rad(10),
                           vertical_fov=np.deg2rad(10), max_range=30,
                           scan_period=0.1)
        scan = simulate_scan(scene, Pose.identity(), lidar)
        ts = scan.timestamps
        assert ts.min() == 0.0
        assert ts.max() < 0.1
        assert (np.diff(ts) >= 0).all()  # azimuth-major ordering


class TestEquivariance:
    def test_scene_transform_exact(self):
        scene = scene_room(seed=3)
        P = se3_exp([0.4, -0.2, 0.1, 0.05, -0.02, 0.3])
        lidar = LidarModel(channels=8, horizontal_resolution=np.deg2rad(2.0),
                           vertical_fov=np.deg2rad(20), max_range=30)
        a = simulate_scan(scene, P, lidar)
        b = simulate_scan(transform_scene(scene, P.inverse()), Pose.identity(), lidar)
        assert len(a) == len(b)
        assert np.abs(a.points - b.points).max() < 1e-9

    def test_world_frame_points_land_on_surfaces(self):
        # scan from a shifted pose; world points must lie near the identity
        # scan's surfaces (within ray discretization)
        scene = scene_room(seed=3)
        lidar = LidarModel(channels=16, horizontal_resolution=np.deg2rad(1.0),
                           vertical_fov=np.deg2rad(30), max_range=30)
        base_pose = Pose(np.eye(3), [0.0, 0.0, 1.5])
        P = se3_exp([0.2, 0.1, 0.0, 0.0, 0.0, 0.05]) @ base_pose
        a_world = se3_apply(P, simulate_scan(scene, P, lidar))
        b_world = se3_apply(base_pose, simulate_scan(scene, base_pose, lidar))
        tree = StaticKdTree(b_world.points)
        _, d2 = tree.nn1(a_world.points)
        # vertical ray spacing dominates the discretization tolerance
        assert np.quantile(np.sqrt(d2), 0.9) < 0.6


class TestTrajectories:
    def test_static(self):
        traj = trajectory_static(10)
        assert len(traj) == 10
        assert all(np.array_equal(s.pose.translation, traj[0].pose.translation)
                   for s in traj)

    def test_line_speed(self):
        traj = trajectory_line(11, rate=10.0, speed=2.0)
        assert np.allclose(traj[-1].pose.translation, [2.0, 0, 0])

    def test_timestamps_strictly_increasing(self):
        for traj in (trajectory_line(20), trajectory_loop(20),
                     trajectory_figure_eight(20)):
            ts = [s.timestamp for s in traj]
            assert (np.diff(ts) > 0).all()

    def test_loop_returns_near_start(self):
        # one full lap: perimeter of the rounded rectangle
        half_w, half_h, r = 6.5, 4.0, 2.5
        per = 4 * (half_w - r) + 4 * (half_h - r) + 2 * np.pi * r
        frames = 200
        speed = per / (frames / 10.0)
        traj = trajectory_loop(frames + 1, speed=speed, half_w=half_w,
                               half_h=half_h, corner_r=r)
        d = np.linalg.norm(traj[-1].pose.translation - traj[0].pose.translation)
        assert d < 0.2

    def test_imu_rates_match_yaw(self):
        traj = trajectory_loop(300, speed=4.0)
        imu = make_imu(traj)
        w = max(np.linalg.norm(s.angular_velocity) for s in imu)
        assert abs(w - 4.0 / 1.5) < 0.1
        ts = [s.timestamp for s in imu]
        assert (np.diff(ts) > 0).all()


class TestScenePresets:
    @pytest.mark.parametrize("scene,pose", [
        (scene_room(seed=1), Pose(np.eye(3), [0, 0, 1.5])),
        (scene_corridor(length=20, seed=1), Pose(np.eye(3), [2, 0, 1.2])),
        (scene_loop(seed=1), Pose(np.eye(3), [-6.5, -4.0, 1.2])),
    ])
    def test_scans_are_rich(self, scene, pose):
        lidar = LidarModel(channels=16, horizontal_resolution=np.deg2rad(1.2),
                           max_range=25)
        scan = simulate_scan(scene, pose, lidar)
        assert len(scan) > 3000

    def test_scene_requires_primitives(self):
        with pytest.raises(ValueError):
            SceneSpec([])
