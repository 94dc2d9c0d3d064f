"""Plane-to-plane GICP solver driven by stored normals.

Per-pair cost d^T M^-1 d with M = C(n_target) + R C(n_source) R^T, where
C(n) = I + (eps - 1) n n^T is the surface covariance reconstructed from the
unit normal. One damped Gauss-Newton step per iteration on SE(3), with
correspondences re-searched every iteration; the damping parameter grows
tenfold whenever a step would increase the cost under the current
correspondence set, which makes accepted per-iteration costs non-increasing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import (DEFAULT_EPSILON, PointCloud, Pose,
                       covariances_from_normals,
                       covariances_from_normals_explicit,
                       rotation_angle_between, se3_exp)
from .index import StaticKdTree

MIN_CORRESPONDENCES = 6
MIN_SOURCE_POINTS = 20
LAMBDA_START = 1e-6
LAMBDA_GROW = 10.0
LAMBDA_SHRINK = 0.1
LAMBDA_MAX = 1e8
COST_ACCEPT_SLACK = 1e-12


@dataclass(frozen=True)
class GicpConfig:
    epsilon: float = DEFAULT_EPSILON
    max_corr_dist: float = 0.3
    max_iterations: int = 20
    step_tolerance: float = 1e-10
    rot_fitness_threshold: float = 0.005
    rot_gate_enabled: bool = True
    num_threads: int = 1
    covariance_mode: str = "closed"   # 'closed' or 'explicit'

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("epsilon", "max_corr_dist", "step_tolerance", "rot_fitness_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_threads < 1:
            raise ValueError("num_threads must be >= 1")
        if self.covariance_mode not in ("closed", "explicit"):
            raise ValueError("covariance_mode must be 'closed' or 'explicit'")


@dataclass
class IterationRecord:
    n_pairs: int
    cost_before: float        # mean Mahalanobis under this iteration's pairs
    cost_after: float         # same pairs and metric, after the accepted step
    step_norm2: float
    lam: float
    accepted: bool


@dataclass
class RegistrationResult:
    pose: Pose
    converged: bool
    iterations: int
    final_cost: float
    fitness: float
    rotation_change: float
    n_correspondences: int
    failure_reason: str = ""
    cost_trace: list[IterationRecord] = field(default_factory=list)


class CloudTarget:
    """Neighbor-queryable view of a cloud with normals (invalid ones dropped)."""

    def __init__(self, cloud: PointCloud):
        if cloud.normals is None:
            raise ValueError("target cloud must carry normals")
        valid = cloud.normal_valid
        self.points = cloud.points[valid]
        self.normals = cloud.normals[valid]
        self.tree = StaticKdTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def match(self, points, max_d2: float):
        idx, d2 = self.tree.nn1(points, max_d2)
        valid = idx >= 0
        safe = np.where(valid, idx, 0)
        return self.points[safe], self.normals[safe], d2, valid


def _as_target(target):
    if isinstance(target, PointCloud):
        return CloudTarget(target)
    if not hasattr(target, "match"):
        raise TypeError("target must be a PointCloud or expose match(points, max_d2)")
    return target


def _chunked_match(target, points, max_d2: float, threads: int):
    if threads <= 1 or len(points) < 2 * threads:
        return target.match(points, max_d2)
    bounds = np.linspace(0, len(points), threads + 1).astype(int)
    chunks = [points[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: target.match(c, max_d2), chunks))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def _hat_batch(p: np.ndarray) -> np.ndarray:
    n = len(p)
    H = np.zeros((n, 3, 3))
    H[:, 0, 1] = -p[:, 2]
    H[:, 0, 2] = p[:, 1]
    H[:, 1, 0] = p[:, 2]
    H[:, 1, 2] = -p[:, 0]
    H[:, 2, 0] = -p[:, 1]
    H[:, 2, 1] = p[:, 0]
    return H


def _pair_metrics(n_src_rot: np.ndarray, n_tgt: np.ndarray, rot: np.ndarray,
                  eps: float, mode: str) -> np.ndarray:
    """Inverse combined covariances L_i = (C_b + R C_a R^T)^-1 per pair.

    'closed' uses C = I + (eps-1) n n^T directly; 'explicit' rebuilds both
    covariances from in-plane bases (the long form kept for equivalence
    checks), with matching results to rounding.
    """
    if mode == "closed":
        M = (eps - 1.0) * (np.einsum("ni,nj->nij", n_tgt, n_tgt)
                           + np.einsum("ni,nj->nij", n_src_rot, n_src_rot))
        M[:, 0, 0] += 2.0
        M[:, 1, 1] += 2.0
        M[:, 2, 2] += 2.0
    else:
        # n_src_rot = R n_src; recover body-frame normals for the explicit form
        n_src = n_src_rot @ rot
        Ca = covariances_from_normals_explicit(n_src, eps)
        Cb = covariances_from_normals_explicit(n_tgt, eps)
        M = Cb + np.einsum("ij,njk,lk->nil", rot, Ca, rot)
    return np.linalg.inv(M)


def _pair_metric_single(n_a, n_b, pose: Pose, eps: float) -> np.ndarray:
    n_a = np.asarray(n_a, dtype=np.float64).reshape(1, 3)
    n_b = np.asarray(n_b, dtype=np.float64).reshape(1, 3)
    return _pair_metrics(n_a @ pose.rotation.T, n_b, pose.rotation, eps, "closed")[0]


def pair_cost_at(a, b, n_a, n_b, base_pose: Pose, xi, eps: float = DEFAULT_EPSILON) -> float:
    """Gauss-Newton objective of one correspondence at a local update.

    Evaluates r^T L r with r = b - exp(xi) base_pose a and the pair metric L
    held at ``base_pose`` - exactly the function one solver iteration
    minimizes, and the one the analytic gradient differentiates.
    """
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    L = _pair_metric_single(n_a, n_b, base_pose, eps)
    cand = se3_exp(xi) @ base_pose
    r = b - (cand.rotation @ a + cand.translation)
    return float(r @ L @ r)


def pair_cost_and_gradient(a, b, n_a, n_b, pose: Pose, eps: float = DEFAULT_EPSILON):
    """Cost and analytic gradient of one correspondence at xi=0.

    The gradient is of ``pair_cost_at`` with respect to xi (ordered
    [v, omega]) at xi=0, i.e. with the pair metric held at ``pose``.
    """
    a = np.asarray(a, dtype=np.float64).reshape(1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    L = _pair_metric_single(n_a, n_b, pose, eps)
    p = pose.apply(a)[0]
    r = b - p
    J = np.zeros((3, 6))
    J[:, :3] = -np.eye(3)
    J[:, 3:] = _hat_batch(p.reshape(1, 3))[0]
    cost = float(r @ L @ r)
    grad = 2.0 * (J.T @ L @ r)
    return cost, grad


def gicp_align(source: PointCloud, target, seed: Pose | None = None,
               cfg: GicpConfig | None = None) -> RegistrationResult:
    """Align ``source`` onto ``target``; the result pose maps source frame
    into target frame.

    ``target`` is a PointCloud with normals or any neighbor-queryable object
    exposing ``match`` (a map store). Iterates damped Gauss-Newton steps
    until the squared norm of the SE(3) update drops below
    ``step_tolerance`` or ``max_iterations`` is reached.
    """
    cfg = cfg or GicpConfig()
    seed = seed or Pose.identity()
    if source.normals is None:
        raise ValueError("source cloud must carry normals")
    src_mask = source.normal_valid
    a_pts = source.points[src_mask]
    a_nrm = source.normals[src_mask]
    if len(a_pts) < MIN_SOURCE_POINTS:
        raise ValueError(f"source must have >= {MIN_SOURCE_POINTS} valid normals")
    tgt = _as_target(target)

    max_d2 = cfg.max_corr_dist * cfg.max_corr_dist
    pose = seed
    lam = LAMBDA_START
    trace: list[IterationRecord] = []
    converged = False
    failure = ""
    n_pairs_last = 0
    iterations = 0

    def finish(reason=""):
        fit = _fitness_with_target(a_pts, tgt, pose, cfg)
        return RegistrationResult(
            pose=pose, converged=converged, iterations=iterations,
            final_cost=trace[-1].cost_after if trace else np.inf,
            fitness=fit, rotation_change=rotation_angle_between(pose, seed),
            n_correspondences=n_pairs_last, failure_reason=reason,
            cost_trace=trace)

    for iterations in range(1, cfg.max_iterations + 1):
        R = pose.rotation
        P = a_pts @ R.T + pose.translation
        b_pts, b_nrm, d2, valid = _chunked_match(tgt, P, max_d2, cfg.num_threads)
        n_pairs_last = int(valid.sum())
        if n_pairs_last < MIN_CORRESPONDENCES:
            failure = "insufficient correspondences"
            return finish(failure)
        a = a_pts[valid]
        na = a_nrm[valid]
        p = P[valid]
        b = b_pts[valid]
        nb = b_nrm[valid]

        L = _pair_metrics(na @ R.T, nb, R, cfg.epsilon, cfg.covariance_mode)
        r = b - p
        Lr = np.einsum("nij,nj->ni", L, r)
        cost_before = float(np.einsum("ni,ni->", r, Lr))
        if not np.isfinite(cost_before):
            failure = "non-finite cost"
            return finish(failure)

        n = len(a)
        J = np.zeros((n, 3, 6))
        J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = -1.0
        J[:, :, 3:] = _hat_batch(p)
        JtL = np.matmul(J.transpose(0, 2, 1), L)
        H = np.matmul(JtL, J).sum(axis=0)
        g = np.matmul(JtL, r[:, :, None])[:, :, 0].sum(axis=0)

        accepted = False
        step2 = 0.0
        new_pose = pose
        cost_after = cost_before
        while lam <= LAMBDA_MAX:
            try:
                delta = np.linalg.solve(H + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= LAMBDA_GROW
                continue
            cand = se3_exp(delta) @ pose
            r_new = b - (a @ cand.rotation.T + cand.translation)
            cost_new = float(np.einsum("ni,nij,nj->", r_new, L, r_new))
            if np.isfinite(cost_new) and cost_new <= cost_before + COST_ACCEPT_SLACK * max(cost_before, 1.0):
                accepted = True
                step2 = float(delta @ delta)
                new_pose = cand
                cost_after = cost_new
                lam = max(lam * LAMBDA_SHRINK, 1e-12)
                break
            lam *= LAMBDA_GROW
        trace.append(IterationRecord(n_pairs=n, cost_before=cost_before / n,
                                     cost_after=cost_after / n, step_norm2=step2,
                                     lam=lam, accepted=accepted))
        if not accepted:
            failure = "damping exhausted without cost decrease"
            return finish(failure)
        pose = new_pose
        if step2 < cfg.step_tolerance:
            converged = True
            break

    return finish(failure)


def _fitness_with_target(a_pts, tgt, pose: Pose, cfg: GicpConfig) -> float:
    P = a_pts @ pose.rotation.T + pose.translation
    _, _, d2, valid = tgt.match(P, cfg.max_corr_dist * cfg.max_corr_dist)
    if not valid.any():
        return np.inf
    return float(d2[valid].mean())


def fitness(source: PointCloud, target, pose: Pose, cfg: GicpConfig | None = None) -> float:
    """Mean squared inlier correspondence distance at ``pose``; inf when the
    clouds do not overlap within the association gate."""
    cfg = cfg or GicpConfig()
    if source.normals is not None:
        pts = source.points[source.normal_valid]
    else:
        pts = source.points
    return _fitness_with_target(pts, _as_target(target), pose, cfg)


def rotational_gate(result: RegistrationResult, cfg: GicpConfig) -> bool:
    """Accept a refinement only if its rotation stays near the seed.

    The threshold is applied in radians to the rotation magnitude between
    seed and result; a disabled gate accepts everything.
    """
    if not cfg.rot_gate_enabled:
        return True
    return result.rotation_change <= cfg.rot_fitness_threshold
