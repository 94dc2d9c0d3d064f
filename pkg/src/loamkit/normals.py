"""Per-point normal estimation on the voxelized scan.

Normals are computed once here and then carried with the points through
registration and into the map, so surface covariances downstream never
require a fresh neighborhood search.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud
from .index import StaticKdTree

DEFAULT_K = 10
# a neighborhood is rank-deficient when its two smallest scatter eigenvalues
# both fall below this fraction of the trace
DEGENERACY_RATIO = 1e-12


def estimate_normals(cloud: PointCloud, k: int = DEFAULT_K, viewpoint=(0.0, 0.0, 0.0),
                     tree: StaticKdTree | None = None) -> PointCloud:
    """Attach unit normals from k-NN scatter matrices.

    For each point the neighborhood is the point itself plus its k nearest
    neighbors; the normal is the eigenvector of the smallest scatter
    eigenvalue, flipped so that normal . (viewpoint - point) >= 0. Collinear
    neighborhoods get normal_valid=False and are skipped by registration.

    ``tree`` may pass in a kd-tree already built over this cloud's points.
    """
    n = len(cloud)
    if k < 3:
        raise ValueError("k must be >= 3")
    if n < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points, got {n}")
    vp = np.asarray(viewpoint, dtype=np.float64).reshape(3)
    if tree is None:
        tree = StaticKdTree(cloud.points)
    idx, _, _ = tree.query_knn(cloud.points, k + 1)
    neigh = cloud.points[idx]                       # (n, k+1, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    scatter = np.einsum("nki,nkj->nij", centered, centered)
    eigvals, eigvecs = np.linalg.eigh(scatter)
    normals = eigvecs[:, :, 0]
    trace = eigvals.sum(axis=1)
    degenerate = eigvals[:, 1] <= DEGENERACY_RATIO * np.maximum(trace, 1e-300)
    degenerate |= trace <= 0.0
    # orient toward the viewpoint
    flip = np.einsum("ni,ni->n", normals, vp - cloud.points) < 0.0
    normals[flip] = -normals[flip]
    normals[degenerate] = 0.0
    out = cloud.copy()
    out.normals = normals
    out.normal_valid = ~degenerate
    return out
