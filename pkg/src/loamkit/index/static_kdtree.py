"""Balanced kd-tree over a frozen point set.

Built by splitting at the median along the longest bounding-box dimension;
leaves hold small buckets of points stored contiguously. Queries run in the
compiled (or fallback) kernels and are exact: results match brute force,
with distance ties broken by the original point index.
"""

from __future__ import annotations

import numpy as np

from .. import kernels

BUCKET_SIZE = 16


class StaticKdTree:
    """Immutable spatial index; safe to share across threads after build."""

    def __init__(self, points, bucket_size: int = BUCKET_SIZE):
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        self.n = len(pts)
        self._bucket = int(bucket_size)
        if self.n == 0:
            self._pts = np.zeros((0, 3))
            self._idx = np.zeros(0, dtype=np.int64)
            self._left = np.zeros(0, dtype=np.int32)
            self._right = np.zeros(0, dtype=np.int32)
            self._start = np.zeros(0, dtype=np.int32)
            self._end = np.zeros(0, dtype=np.int32)
            self._bbmin = np.zeros((0, 3))
            self._bbmax = np.zeros((0, 3))
            return
        perm = np.arange(self.n, dtype=np.int64)
        left, right, start, end, bbmin, bbmax = [], [], [], [], [], []

        def build(lo: int, hi: int) -> int:
            node = len(left)
            left.append(-1)
            right.append(-1)
            start.append(lo)
            end.append(hi)
            sub = pts[perm[lo:hi]]
            mn = sub.min(axis=0)
            mx = sub.max(axis=0)
            bbmin.append(mn)
            bbmax.append(mx)
            if hi - lo > self._bucket:
                ax = int(np.argmax(mx - mn))
                order = np.argsort(sub[:, ax], kind="stable")
                perm[lo:hi] = perm[lo:hi][order]
                mid = lo + (hi - lo) // 2
                left[node] = build(lo, mid)
                right[node] = build(mid, hi)
            return node

        build(0, self.n)
        self._pts = np.ascontiguousarray(pts[perm])
        self._idx = np.ascontiguousarray(perm)
        self._left = np.asarray(left, dtype=np.int32)
        self._right = np.asarray(right, dtype=np.int32)
        self._start = np.asarray(start, dtype=np.int32)
        self._end = np.asarray(end, dtype=np.int32)
        self._bbmin = np.ascontiguousarray(np.asarray(bbmin))
        self._bbmax = np.ascontiguousarray(np.asarray(bbmax))

    def __len__(self) -> int:
        return self.n

    @property
    def depth(self) -> int:
        """Number of levels (a root-only tree has depth 1; empty tree 0)."""
        if self.n == 0:
            return 0
        depth = np.zeros(len(self._left), dtype=np.int32)
        # nodes are allocated preorder, so parents precede children
        for node in range(len(self._left)):
            for child in (self._left[node], self._right[node]):
                if child >= 0:
                    depth[child] = depth[node] + 1
        return int(depth.max()) + 1

    def query_knn(self, queries, k: int, max_d2: float = np.inf):
        """k nearest neighbors for each query row.

        Returns (idx, d2, counts): (q, k) original indices and squared
        distances sorted by (distance, index); unused slots are -1 / inf.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        out_idx = np.empty((len(q), k), dtype=np.int64)
        out_d2 = np.empty((len(q), k), dtype=np.float64)
        counts = kernels.kd_knn(self._pts, self._idx, self._left, self._right,
                                self._start, self._end, self._bbmin, self._bbmax,
                                q, k, float(max_d2), out_idx, out_d2)
        return out_idx, out_d2, counts

    def nn1(self, queries, max_d2: float = np.inf):
        """Nearest neighbor per query; index -1 where none within max_d2."""
        idx, d2, _ = self.query_knn(queries, 1, max_d2)
        return idx[:, 0], d2[:, 0]

    def query_radius(self, query, r: float):
        """All points within radius r (closed ball), sorted by (d2, index)."""
        if r <= 0:
            raise ValueError("radius must be > 0")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        out_idx = np.empty(self.n, dtype=np.int64)
        out_d2 = np.empty(self.n, dtype=np.float64)
        count = kernels.kd_radius(self._pts, self._idx, self._left, self._right,
                                  self._start, self._end, self._bbmin, self._bbmax,
                                  q, float(r) * float(r), out_idx, out_d2)
        idx = out_idx[:count]
        d2 = out_d2[:count]
        order = np.lexsort((idx, d2))
        return idx[order], d2[order]
