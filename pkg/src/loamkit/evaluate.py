"""Trajectory evaluation: absolute pose error against ground truth."""

from __future__ import annotations

import numpy as np

from .geometry import Pose, rotation_angle
from .simulate import TrajectorySample


def associate(est: list[TrajectorySample], gt: list[TrajectorySample],
              max_dt: float | None = None):
    """Pair each estimate with the nearest-in-time ground-truth sample.

    ``max_dt`` defaults to half the median estimate spacing (half a scan
    period for a regular stream). Returns (est_idx, gt_idx) arrays.
    """
    if not est or not gt:
        raise ValueError("empty trajectory")
    te = np.array([s.timestamp for s in est])
    tg = np.array([s.timestamp for s in gt])
    if max_dt is None:
        spacing = np.median(np.diff(te)) if len(te) > 1 else 0.1
        max_dt = 0.5 * float(spacing)
    pos = np.searchsorted(tg, te)
    lo = np.clip(pos - 1, 0, len(tg) - 1)
    hi = np.clip(pos, 0, len(tg) - 1)
    pick = np.where(np.abs(tg[hi] - te) < np.abs(tg[lo] - te), hi, lo)
    ok = np.abs(tg[pick] - te) <= max_dt
    if not ok.any():
        raise ValueError("no overlapping samples within the association gate")
    return np.nonzero(ok)[0], pick[ok]


def ape(est: list[TrajectorySample], gt: list[TrajectorySample],
        max_dt: float | None = None) -> dict:
    """Absolute pose error after first-pose alignment (odometry convention).

    The estimate is aligned to ground truth by the first associated pose
    only; that sample is zero by construction and excluded from the
    statistics. Returns translational and rotational max/mean errors.
    """
    ei, gi = associate(est, gt, max_dt)
    T_align = gt[gi[0]].pose @ est[ei[0]].pose.inverse()
    terrs, rerrs = [], []
    for e_idx, g_idx in zip(ei[1:], gi[1:]):
        est_aligned = T_align @ est[e_idx].pose
        g = gt[g_idx].pose
        terrs.append(float(np.linalg.norm(est_aligned.translation - g.translation)))
        rerrs.append(np.degrees(rotation_angle(est_aligned.rotation @ g.rotation.T)))
    if not terrs:
        # a single overlapping sample: aligned exactly, zero error
        terrs, rerrs = [0.0], [0.0]
    return {
        "max_m": float(np.max(terrs)),
        "mean_m": float(np.mean(terrs)),
        "max_rot_deg": float(np.max(rerrs)),
        "mean_rot_deg": float(np.mean(rerrs)),
        "n_associated": int(len(ei)),
    }


def load_trajectory_csv(path) -> list[TrajectorySample]:
    """Read a trajectory CSV with header t,tx,ty,tz,qx,qy,qz,qw."""
    from scipy.spatial.transform import Rotation

    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != 8:
        raise ValueError(f"{path}: expected 8 columns t,tx,ty,tz,qx,qy,qz,qw")
    out = []
    for row in rows:
        R = Rotation.from_quat(row[4:8]).as_matrix()
        out.append(TrajectorySample(float(row[0]), Pose(R, row[1:4])))
    return out
