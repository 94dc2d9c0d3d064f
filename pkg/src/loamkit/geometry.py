"""Rigid-body math, point-cloud containers, and surface covariances from normals.

Everything downstream (preprocessing, registration, mapping) builds on the
types and operations here. Points and normals are plain float64 numpy arrays;
``Pose`` wraps a rotation matrix and translation vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

UNIT_TOL = 1e-9
ROTATION_TOL = 1e-9

# Default variance along the surface normal in the plane-to-plane model.
DEFAULT_EPSILON = 1e-3


def _as_vec3(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {np.shape(v)}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def as_unit_normal(n, tol: float = UNIT_TOL) -> np.ndarray:
    """Validate and return ``n`` as a unit 3-vector (float64)."""
    a = _as_vec3(n, "normal")
    if abs(np.dot(a, a) - 1.0) > 2.0 * tol:
        raise ValueError(f"normal must have unit norm, |n| = {np.linalg.norm(a):.12g}")
    return a


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix such that skew(v) @ w == cross(v, w)."""
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues formula: rotation matrix for rotation vector ``omega`` (rad)."""
    w = _as_vec3(omega, "omega")
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-9:
        # second-order series, exact enough below the threshold
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Rotation vector (rad) of a rotation matrix; inverse of so3_exp for angle < pi."""
    R = np.asarray(rot, dtype=np.float64)
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    axial = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-9:
        return axial
    if np.pi - theta < 1e-6:
        # near pi the axial part degenerates; recover axis from the diagonal
        d = np.diag(R)
        i = int(np.argmax(d))
        axis = np.zeros(3)
        axis[i] = np.sqrt(max(0.0, (d[i] + 1.0) * 0.5))
        j, k = (i + 1) % 3, (i + 2) % 3
        axis[j] = R[i, j] / (2.0 * axis[i])
        axis[k] = R[i, k] / (2.0 * axis[i])
        if np.dot(axis, axial) < 0.0:
            axis = -axis
        return theta * axis
    return (theta / np.sin(theta)) * axial


def _so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        + ((1.0 - np.cos(theta)) / t2) * K
        + ((theta - np.sin(theta)) / (t2 * theta)) * (K @ K)
    )


def _so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    t2 = theta * theta
    coeff = (1.0 - 0.5 * theta * np.sin(theta) / (1.0 - np.cos(theta))) / t2
    return np.eye(3) - 0.5 * K + coeff * (K @ K)


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3): x_out = rotation @ x_in + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = _as_vec3(self.translation, "translation")
        err = np.max(np.abs(R.T @ R - np.eye(3)))
        if err > 100.0 * ROTATION_TOL or np.linalg.det(R) < 0.0:
            raise ValueError(f"rotation is not orthonormal with det +1 (error {err:.3g})")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self * other)(x) = self(other(x))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (n, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return Pose(m[:3, :3], m[:3, 3])

    def renormalized(self) -> "Pose":
        """Project the rotation back onto SO(3); call after long compose chains."""
        u, _, vt = np.linalg.svd(self.rotation)
        R = u @ vt
        if np.linalg.det(R) < 0.0:
            R = u @ np.diag([1.0, 1.0, -1.0]) @ vt
        return Pose(R, self.translation)


def se3_exp(xi) -> Pose:
    """Exponential map. ``xi`` is [v, omega]: translation (m) then rotation (rad)."""
    x = np.asarray(xi, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(x)):
        raise ValueError("xi must be finite")
    v, omega = x[:3], x[3:]
    R = so3_exp(omega)
    t = _so3_left_jacobian(omega) @ v
    return Pose(R, t)


def se3_log(pose: Pose) -> np.ndarray:
    """Logarithm map, inverse of se3_exp for rotation angles < pi."""
    omega = so3_log(pose.rotation)
    v = _so3_left_jacobian_inv(omega) @ pose.translation
    return np.concatenate([v, omega])


def rotation_angle(rot: np.ndarray) -> float:
    """Rotation angle in radians of a rotation matrix.

    Uses atan2 of the axial (sine) part against the trace (cosine) part,
    which stays precise for very small angles where arccos loses half the
    significant digits.
    """
    R = np.asarray(rot)
    axial = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    sin_theta = np.linalg.norm(axial)
    cos_theta = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(sin_theta, cos_theta))


def rotation_angle_between(pose_a: Pose, pose_b: Pose) -> float:
    """Magnitude of the relative rotation between two poses, radians."""
    return rotation_angle(pose_a.rotation @ pose_b.rotation.T)


@dataclass
class PointCloud:
    """Array-of-points container with optional per-point normals and timestamps.

    ``normals`` and ``timestamps`` are parallel to ``points`` when present.
    ``normal_valid`` flags normals that came from a well-conditioned
    neighborhood; invalid entries are excluded from registration.
    ``timestamps`` are per-point acquisition offsets within a scan, seconds.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    normal_valid: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    frame_id: str = ""

    def __post_init__(self):
        self.points = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        n = len(self.points)
        if self.normals is not None:
            self.normals = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64).reshape(-1, 3))
            if len(self.normals) != n:
                raise ValueError("normals must parallel points")
            if self.normal_valid is None:
                self.normal_valid = np.ones(n, dtype=bool)
        if self.normal_valid is not None:
            self.normal_valid = np.asarray(self.normal_valid, dtype=bool).reshape(-1)
            if len(self.normal_valid) != n:
                raise ValueError("normal_valid must parallel points")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
            if len(self.timestamps) != n:
                raise ValueError("timestamps must parallel points")

    def __len__(self) -> int:
        return len(self.points)

    @staticmethod
    def empty(frame_id: str = "") -> "PointCloud":
        return PointCloud(points=np.zeros((0, 3)), frame_id=frame_id)

    def select(self, mask_or_indices) -> "PointCloud":
        """Subset cloud by boolean mask or index array; order preserved."""
        return PointCloud(
            points=self.points[mask_or_indices],
            normals=None if self.normals is None else self.normals[mask_or_indices],
            normal_valid=None if self.normal_valid is None else self.normal_valid[mask_or_indices],
            timestamps=None if self.timestamps is None else self.timestamps[mask_or_indices],
            frame_id=self.frame_id,
        )

    def copy(self) -> "PointCloud":
        return PointCloud(
            points=self.points.copy(),
            normals=None if self.normals is None else self.normals.copy(),
            normal_valid=None if self.normal_valid is None else self.normal_valid.copy(),
            timestamps=None if self.timestamps is None else self.timestamps.copy(),
            frame_id=self.frame_id,
        )

    def with_frame(self, frame_id: str) -> "PointCloud":
        return replace(self, frame_id=frame_id)


def concat_clouds(clouds: list[PointCloud], frame_id: str = "") -> PointCloud:
    """Concatenate clouds; optional fields survive only if present on every input."""
    clouds = [c for c in clouds]
    if not clouds:
        return PointCloud.empty(frame_id)
    points = np.concatenate([c.points for c in clouds])
    normals = None
    valid = None
    stamps = None
    if all(c.normals is not None for c in clouds):
        normals = np.concatenate([c.normals for c in clouds])
        valid = np.concatenate([c.normal_valid for c in clouds])
    if all(c.timestamps is not None for c in clouds):
        stamps = np.concatenate([c.timestamps for c in clouds])
    return PointCloud(points=points, normals=normals, normal_valid=valid,
                      timestamps=stamps, frame_id=frame_id)


def se3_apply(pose: Pose, cloud: PointCloud) -> PointCloud:
    """Transform a cloud: points to R p + t, normals to R n, timestamps preserved."""
    return PointCloud(
        points=pose.apply(cloud.points),
        normals=None if cloud.normals is None else pose.rotate(cloud.normals),
        normal_valid=None if cloud.normal_valid is None else cloud.normal_valid.copy(),
        timestamps=None if cloud.timestamps is None else cloud.timestamps.copy(),
        frame_id=cloud.frame_id,
    )


def plane_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane orthogonal to unit normal ``n``.

    {n, u2, u3} is a right-handed orthonormal triad with u3 = n x u2. The
    construction picks the coordinate axis least aligned with n and projects
    it onto the plane, so it has no singular directions; any valid in-plane
    basis produces the same surface covariance.
    """
    n = as_unit_normal(n)
    axis = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[axis] = 1.0
    u2 = e - np.dot(e, n) * n
    u2 /= np.linalg.norm(u2)
    u3 = np.cross(n, u2)
    return u2, u3


def _check_epsilon(eps: float) -> float:
    eps = float(eps)
    if not np.isfinite(eps) or not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {eps}")
    return eps


def covariance_from_normal(n, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Plane-to-plane surface covariance reconstructed from a stored unit normal.

    Returns C = I + (eps - 1) n n^T, i.e. variance eps along the normal and 1
    in every in-plane direction. Equal (to rounding) to the explicit sum
    eps*n n^T + u2 u2^T + u3 u3^T for any in-plane basis {u2, u3}.
    """
    n = as_unit_normal(n)
    eps = _check_epsilon(eps)
    return np.eye(3) + (eps - 1.0) * np.outer(n, n)


def covariance_from_normal_explicit(n, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Explicit eigenbasis form of the surface covariance; used as a cross-check."""
    n = as_unit_normal(n)
    eps = _check_epsilon(eps)
    u2, u3 = plane_basis(n)
    return eps * np.outer(n, n) + np.outer(u2, u2) + np.outer(u3, u3)


def covariances_from_normals(normals: np.ndarray, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Batched closed form: (n, 3, 3) covariances for an (n, 3) array of unit normals."""
    eps = _check_epsilon(eps)
    nn = np.asarray(normals, dtype=np.float64)
    C = (eps - 1.0) * np.einsum("ni,nj->nij", nn, nn)
    C[:, 0, 0] += 1.0
    C[:, 1, 1] += 1.0
    C[:, 2, 2] += 1.0
    return C


def plane_bases_batch(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized plane_basis over an (n, 3) array of unit normals."""
    nn = np.asarray(normals, dtype=np.float64)
    axis = np.argmin(np.abs(nn), axis=1)
    e = np.zeros_like(nn)
    e[np.arange(len(nn)), axis] = 1.0
    u2 = e - (np.einsum("ni,ni->n", e, nn))[:, None] * nn
    u2 /= np.linalg.norm(u2, axis=1, keepdims=True)
    u3 = np.cross(nn, u2)
    return u2, u3


def covariances_from_normals_explicit(normals: np.ndarray, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Batched explicit-basis surface covariances (test / comparison path)."""
    eps = _check_epsilon(eps)
    nn = np.asarray(normals, dtype=np.float64)
    u2, u3 = plane_bases_batch(nn)
    return (
        eps * np.einsum("ni,nj->nij", nn, nn)
        + np.einsum("ni,nj->nij", u2, u2)
        + np.einsum("ni,nj->nij", u3, u3)
    )
