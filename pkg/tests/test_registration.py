import numpy as np
import pytest

from loamkit.geometry import (PointCloud, Pose, rotation_angle_between,
                              se3_apply, se3_exp)
from loamkit.registration import (GicpConfig, fitness, gicp_align,
                                  pair_cost_and_gradient, pair_cost_at,
                                  rotational_gate)

from conftest import random_unit_vectors


def random_transform(rng, max_t=0.2, max_deg=10.0):
    t = rng.uniform(-1, 1, 3)
    t *= rng.uniform(0, max_t) / max(np.linalg.norm(t), 1e-12)
    r = rng.uniform(-1, 1, 3)
    r *= np.deg2rad(rng.uniform(0, max_deg)) / max(np.linalg.norm(r), 1e-12)
    return se3_exp(np.concatenate([t, r]))


class TestSelfAlignment:
    def test_identity_within_two_iterations(self, room_scan):
        res = gicp_align(room_scan, room_scan, Pose.identity(), GicpConfig())
        assert res.converged
        assert res.iterations <= 2
        assert np.linalg.norm(res.pose.translation) < 1e-6
        assert res.rotation_change < 1e-6


class TestTransformRecovery:
    def test_recovers_random_transforms(self, room_scan, rng):
        cfg = GicpConfig()
        for _ in range(10):
            T = random_transform(rng)
            target = se3_apply(T, room_scan)
            res = gicp_align(room_scan, target, Pose.identity(), cfg)
            assert res.converged
            assert res.iterations <= 20
            assert np.linalg.norm(res.pose.translation - T.translation) < 1e-3
            assert np.degrees(rotation_angle_between(res.pose, T)) < 0.1

    def test_seed_invariance_in_basin(self, room_scan, rng):
        cfg = GicpConfig()
        T = random_transform(rng, max_t=0.15, max_deg=8.0)
        target = se3_apply(T, room_scan)
        poses = []
        for _ in range(4):
            seed = random_transform(rng, max_t=0.1, max_deg=5.0) @ T
            res = gicp_align(room_scan, target, seed, cfg)
            assert res.converged
            poses.append(res.pose)
        for p in poses[1:]:
            assert np.linalg.norm(p.translation - poses[0].translation) < 1e-4
            assert np.degrees(rotation_angle_between(p, poses[0])) < 0.01

    def test_forward_backward_consistency(self, room_scan, rng):
        cfg = GicpConfig()
        T = random_transform(rng, max_t=0.15, max_deg=6.0)
        target = se3_apply(T, room_scan)
        ab = gicp_align(room_scan, target, Pose.identity(), cfg)
        ba = gicp_align(target, room_scan, Pose.identity(), cfg)
        comp = ab.pose @ ba.pose
        assert np.linalg.norm(comp.translation) < 1e-3
        assert np.degrees(rotation_angle_between(comp, Pose.identity())) < 0.05


class TestDegenerateScene:
    def test_single_plane_constrains_normal_direction_only(self, rng):
        # an infinite plane z=0: out-of-plane translation must be recovered
        pts = np.c_[rng.uniform(-10, 10, (3000, 2)), np.zeros(3000)]
        nrm = np.tile([0.0, 0.0, 1.0], (3000, 1))
        src = PointCloud(points=pts, normals=nrm)
        T = se3_exp([0.02, -0.03, 0.12, 0, 0, 0])
        tgt = se3_apply(T, src)
        res = gicp_align(src, tgt, Pose.identity(), GicpConfig())
        assert res.converged
        # only the plane-normal direction is observable
        assert abs(res.pose.translation[2] - 0.12) < 1e-3


class TestGradient:
    def test_matches_central_differences(self, rng):
        h = 1e-6
        worst = 0.0
        for _ in range(100):
            a, b = rng.normal(size=3), rng.normal(size=3)
            na = random_unit_vectors(1, rng)[0]
            nb = random_unit_vectors(1, rng)[0]
            pose = se3_exp(rng.normal(size=6) * 0.3)
            _, g = pair_cost_and_gradient(a, b, na, nb, pose)
            fd = np.zeros(6)
            for i in range(6):
                e = np.zeros(6)
                e[i] = h
                fd[i] = (pair_cost_at(a, b, na, nb, pose, e)
                         - pair_cost_at(a, b, na, nb, pose, -e)) / (2 * h)
            rel = np.abs(fd - g).max() / max(np.abs(g).max(), 1e-12)
            worst = max(worst, rel)
        assert worst < 1e-4


class TestCostBehaviour:
    def test_monotone_accepted_costs(self, room_scan, rng):
        cfg = GicpConfig()
        for _ in range(5):
            T = random_transform(rng)
            res = gicp_align(room_scan, se3_apply(T, room_scan), Pose.identity(), cfg)
            for it in res.cost_trace:
                assert it.accepted
                assert it.cost_after <= it.cost_before * (1 + 1e-9) + 1e-15

    def test_covariance_paths_agree(self, room_scan, rng):
        T = random_transform(rng)
        target = se3_apply(T, room_scan)
        r1 = gicp_align(room_scan, target, Pose.identity(), GicpConfig())
        r2 = gicp_align(room_scan, target, Pose.identity(),
                        GicpConfig(covariance_mode="explicit"))
        assert len(r1.cost_trace) == len(r2.cost_trace)
        for a, b in zip(r1.cost_trace, r2.cost_trace):
            assert abs(a.cost_before - b.cost_before) < 1e-10
        assert np.linalg.norm(r1.pose.translation - r2.pose.translation) < 1e-9
        assert np.degrees(rotation_angle_between(r1.pose, r2.pose)) < 1e-7


class TestFailureModes:
    def test_insufficient_correspondences(self, rng):
        src_pts = rng.random((30, 3))
        src = PointCloud(points=src_pts, normals=random_unit_vectors(30, rng))
        far = PointCloud(points=src_pts + 100.0,
                         normals=random_unit_vectors(30, rng))
        res = gicp_align(src, far, Pose.identity(), GicpConfig())
        assert not res.converged
        assert "correspondences" in res.failure_reason
        assert np.isinf(res.fitness)

    def test_source_too_small(self, rng):
        tiny = PointCloud(points=rng.random((5, 3)),
                          normals=random_unit_vectors(5, rng))
        with pytest.raises(ValueError):
            gicp_align(tiny, tiny, Pose.identity(), GicpConfig())

    def test_source_without_normals(self, rng):
        cloud = PointCloud(points=rng.random((50, 3)))
        with pytest.raises(ValueError):
            gicp_align(cloud, cloud, Pose.identity(), GicpConfig())

    def test_invalid_normals_excluded(self, room_scan, rng):
        # marking a slab of source normals invalid must not break alignment
        src = room_scan.copy()
        src.normal_valid = src.normal_valid.copy()
        src.normal_valid[: len(src) // 3] = False
        res = gicp_align(src, room_scan, Pose.identity(), GicpConfig())
        assert res.converged
        assert np.linalg.norm(res.pose.translation) < 1e-5


class TestFitness:
    def test_identical_zero(self, room_scan):
        assert fitness(room_scan, room_scan, Pose.identity(), GicpConfig()) < 1e-24

    def test_offset_plane_analytic(self, rng):
        # plane perpendicular to x offset by 0.1 m: mean squared distance 0.01
        y, z = np.meshgrid(np.linspace(-5, 5, 60), np.linspace(-5, 5, 60))
        pts = np.c_[np.zeros(y.size), y.ravel(), z.ravel()]
        nrm = np.tile([1.0, 0.0, 0.0], (len(pts), 1))
        src = PointCloud(points=pts, normals=nrm)
        tgt = PointCloud(points=pts + [0.1, 0, 0], normals=nrm)
        f = fitness(src, tgt, Pose.identity(), GicpConfig())
        assert abs(f - 0.01) < 1e-12

    def test_empty_overlap_inf(self, rng):
        src = PointCloud(points=rng.random((40, 3)),
                         normals=random_unit_vectors(40, rng))
        tgt = PointCloud(points=rng.random((40, 3)) + 50.0,
                         normals=random_unit_vectors(40, rng))
        assert np.isinf(fitness(src, tgt, Pose.identity(), GicpConfig()))


class TestRotationalGate:
    def _result(self, rot_change):
        from loamkit.registration import RegistrationResult
        return RegistrationResult(pose=Pose.identity(), converged=True,
                                  iterations=1, final_cost=0.0, fitness=0.0,
                                  rotation_change=rot_change,
                                  n_correspondences=100)

    def test_zero_accepts(self):
        assert rotational_gate(self._result(0.0), GicpConfig())

    def test_above_threshold_rejects(self):
        cfg = GicpConfig(rot_fitness_threshold=0.005)
        assert not rotational_gate(self._result(0.01), cfg)

    def test_infinite_threshold_accepts_everything(self):
        cfg = GicpConfig(rot_fitness_threshold=np.inf)
        assert rotational_gate(self._result(10.0), cfg)

    def test_disabled_gate_accepts(self):
        cfg = GicpConfig(rot_fitness_threshold=1e-9, rot_gate_enabled=False)
        assert rotational_gate(self._result(1.0), cfg)


class TestThreads:
    def test_thread_count_does_not_change_result(self, room_scan, rng):
        T = random_transform(rng)
        target = se3_apply(T, room_scan)
        r1 = gicp_align(room_scan, target, Pose.identity(),
                        GicpConfig(num_threads=1))
        r4 = gicp_align(room_scan, target, Pose.identity(),
                        GicpConfig(num_threads=4))
        assert np.array_equal(r1.pose.translation, r4.pose.translation)
        assert np.array_equal(r1.pose.rotation, r4.pose.rotation)
