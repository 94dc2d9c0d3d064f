"""Exact-by-construction flat index; the test oracle for every other index."""

from __future__ import annotations

import numpy as np


class BruteForceIndex:
    """Flat list of (point, alive flag); every query is a full linear scan."""

    def __init__(self, points=None, seq_start: int = 0):
        self._pts = np.zeros((0, 3))
        self._seq = np.zeros(0, dtype=np.int64)
        self._alive = np.zeros(0, dtype=bool)
        self._next_seq = seq_start
        if points is not None and len(points):
            self.insert(points)

    def __len__(self) -> int:
        return int(self._alive.sum())

    @property
    def allocated(self) -> int:
        return len(self._pts)

    def insert(self, points) -> np.ndarray:
        """Append points (multiset semantics); returns their insertion ids."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        seqs = np.arange(self._next_seq, self._next_seq + len(pts), dtype=np.int64)
        self._next_seq += len(pts)
        self._pts = np.concatenate([self._pts, pts])
        self._seq = np.concatenate([self._seq, seqs])
        self._alive = np.concatenate([self._alive, np.ones(len(pts), dtype=bool)])
        return seqs

    def delete_box(self, lo, hi) -> int:
        """Mark alive points inside the closed box dead; returns count."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        inside = np.all((self._pts >= lo) & (self._pts <= hi), axis=1)
        newly = inside & self._alive
        self._alive[newly] = False
        return int(newly.sum())

    def delete_outside_box(self, lo, hi) -> int:
        """Mark alive points strictly outside the closed box dead."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        inside = np.all((self._pts >= lo) & (self._pts <= hi), axis=1)
        newly = ~inside & self._alive
        self._alive[newly] = False
        return int(newly.sum())

    def knn(self, query, k: int, max_d2: float = np.inf):
        """(points, d2, seq) of the k nearest alive points, ties by seq."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        pts = self._pts[self._alive]
        seq = self._seq[self._alive]
        d = pts - q
        # column-sequential sum matches the query kernels bit-for-bit
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        keep = d2 <= max_d2
        pts, seq, d2 = pts[keep], seq[keep], d2[keep]
        order = np.lexsort((seq, d2))[:k]
        return pts[order], d2[order], seq[order]

    def radius_search(self, query, r: float):
        """(points, d2, seq) of alive points within the closed ball."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        pts = self._pts[self._alive]
        seq = self._seq[self._alive]
        d = pts - q
        d2 = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        keep = d2 <= r * r
        pts, seq, d2 = pts[keep], seq[keep], d2[keep]
        order = np.lexsort((seq, d2))
        return pts[order], d2[order], seq[order]

    def alive_points(self):
        return self._pts[self._alive], self._seq[self._alive]
