import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loamkit.geometry import (PointCloud, Pose, covariance_from_normal,
                              covariance_from_normal_explicit, plane_basis,
                              se3_apply, se3_exp, se3_log, skew)

from conftest import random_unit_vectors


def unit_vec(v):
    a = np.asarray(v, dtype=float)
    return a / np.linalg.norm(a)


class TestPlaneBasis:
    def test_axis_aligned(self):
        u2, u3 = plane_basis([0.0, 0.0, 1.0])
        for u in (u2, u3):
            assert abs(np.dot(u, [0, 0, 1])) < 1e-12
            assert abs(np.linalg.norm(u) - 1) < 1e-12
        assert abs(np.dot(u2, u3)) < 1e-12

    def test_singular_case_of_naive_formula(self):
        # n_z = 0 breaks the textbook construction; ours must not care
        u2, u3 = plane_basis([1.0, 0.0, 0.0])
        assert abs(np.dot(u2, [1, 0, 0])) < 1e-12
        assert np.allclose(np.cross([1, 0, 0], u2), u3, atol=1e-12)

    def test_oblique(self):
        n = unit_vec([1.0, 1.0, 1.0])
        u2, u3 = plane_basis(n)
        assert abs(np.dot(n, u2)) < 1e-12
        assert abs(np.dot(n, u3)) < 1e-12
        assert abs(np.linalg.norm(u2) - 1) < 1e-12
        assert abs(np.linalg.norm(u3) - 1) < 1e-12

    def test_right_handed(self, rng):
        for n in random_unit_vectors(50, rng):
            u2, u3 = plane_basis(n)
            # {n, u2, u3} right-handed: u2 x u3 == n
            assert np.allclose(np.cross(u2, u3), n, atol=1e-12)

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            plane_basis([1.0, 1.0, 0.0])
        with pytest.raises(ValueError):
            plane_basis([np.nan, 0.0, 0.0])


class TestCovarianceFromNormal:
    def test_axis_aligned_z(self):
        C = covariance_from_normal([0, 0, 1], eps=1e-3)
        assert np.allclose(C, np.diag([1.0, 1.0, 1e-3]), atol=1e-15)

    def test_axis_aligned_x(self):
        C = covariance_from_normal([1, 0, 0], eps=1e-3)
        assert np.allclose(C, np.diag([1e-3, 1.0, 1.0]), atol=1e-15)

    def test_eigenstructure_oblique(self):
        n = unit_vec([1.0, 1.0, 1.0])
        C = covariance_from_normal(n, eps=0.01)
        assert np.allclose(C, np.eye(3) + (0.01 - 1) * np.outer(n, n), atol=1e-15)
        w = np.linalg.eigvalsh(C)
        assert np.allclose(w, [0.01, 1.0, 1.0], atol=1e-9)

    def test_explicit_matches_closed_form(self, rng):
        for n in random_unit_vectors(200, rng):
            C1 = covariance_from_normal(n, 1e-3)
            C2 = covariance_from_normal_explicit(n, 1e-3)
            assert np.abs(C1 - C2).max() < 1e-12

    def test_action_on_normal_and_plane(self, rng):
        for n in random_unit_vectors(20, rng):
            C = covariance_from_normal(n, 1e-3)
            assert np.allclose(C @ n, 1e-3 * n, atol=1e-12)
            u2, u3 = plane_basis(n)
            assert np.allclose(C @ u2, u2, atol=1e-12)
            assert np.allclose(C @ u3, u3, atol=1e-12)

    def test_eigen_reconstruction_equivalence(self, rng):
        # eigendecompose, force eigenvalues to (eps, 1, 1), rebuild
        for n in random_unit_vectors(50, rng):
            C = covariance_from_normal(n, 1e-3)
            w, V = np.linalg.eigh(C)
            rebuilt = V @ np.diag([1e-3, 1.0, 1.0]) @ V.T
            assert np.abs(rebuilt - C).max() < 1e-12
            # the small-eigenvalue eigenvector is the normal, up to sign
            assert min(np.linalg.norm(V[:, 0] - n), np.linalg.norm(V[:, 0] + n)) < 1e-6

    def test_eps_validation(self):
        for bad in (0.0, 1.0, -0.1, np.inf):
            with pytest.raises(ValueError):
                covariance_from_normal([0, 0, 1], bad)


class TestSE3:
    def test_exp_zero_is_identity(self):
        p = se3_exp(np.zeros(6))
        assert np.allclose(p.rotation, np.eye(3), atol=1e-15)
        assert np.allclose(p.translation, 0, atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6))
    def test_log_exp_roundtrip(self, xi):
        xi = np.asarray(xi)
        # keep rotation below 1 rad as the contract requires
        back = se3_log(se3_exp(xi))
        assert np.abs(back - xi).max() < 1e-9

    def test_exp_first_order(self, rng):
        for _ in range(20):
            xi = rng.normal(size=6) * 1e-4
            p = se3_exp(xi)
            approx = np.eye(4)
            approx[:3, :3] += skew(xi[3:])
            approx[:3, 3] = xi[:3]
            assert np.abs(p.to_matrix() - approx).max() < 10 * np.dot(xi, xi)

    def test_compose_inverse(self, rng):
        a = se3_exp(rng.normal(size=6) * 0.5)
        b = se3_exp(rng.normal(size=6) * 0.5)
        c = a @ b
        ident = (c @ b.inverse()) @ a.inverse()
        assert np.abs(ident.to_matrix() - np.eye(4)).max() < 1e-12

    def test_pose_validation(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))


class TestSe3Apply:
    def test_identity(self, rng):
        cloud = PointCloud(points=rng.random((50, 3)))
        out = se3_apply(Pose.identity(), cloud)
        assert np.array_equal(out.points, cloud.points)

    def test_translation(self):
        cloud = PointCloud(points=[[0.0, 0.0, 0.0]])
        out = se3_apply(Pose(np.eye(3), [1, 0, 0]), cloud)
        assert np.allclose(out.points, [[1, 0, 0]])

    def test_yaw_90(self):
        pose = se3_exp([0, 0, 0, 0, 0, np.pi / 2])
        out = se3_apply(pose, PointCloud(points=[[1.0, 0.0, 0.0]]))
        assert np.abs(out.points - [[0, 1, 0]]).max() < 1e-12

    def test_preserves_distances_and_fields(self, rng):
        pts = rng.random((100, 3))
        nrm = random_unit_vectors(100, rng)
        ts = rng.random(100)
        cloud = PointCloud(points=pts, normals=nrm, timestamps=ts)
        pose = se3_exp(rng.normal(size=6))
        out = se3_apply(pose, cloud)
        d0 = np.linalg.norm(pts[1:] - pts[:-1], axis=1)
        d1 = np.linalg.norm(out.points[1:] - out.points[:-1], axis=1)
        assert np.abs(d0 - d1).max() < 1e-9
        assert np.array_equal(out.timestamps, ts)
        assert np.abs(np.linalg.norm(out.normals, axis=1) - 1).max() < 1e-12


class TestBasisIndependence:
    def test_any_plane_basis_gives_same_covariance(self, rng):
        # rebuild the explicit sum with a rotated in-plane basis
        for n in random_unit_vectors(50, rng):
            u2, u3 = plane_basis(n)
            th = rng.uniform(0, 2 * np.pi)
            v2 = np.cos(th) * u2 + np.sin(th) * u3
            v3 = np.cross(n, v2)
            C_rot = 1e-3 * np.outer(n, n) + np.outer(v2, v2) + np.outer(v3, v3)
            assert np.abs(C_rot - covariance_from_normal(n, 1e-3)).max() < 1e-12
