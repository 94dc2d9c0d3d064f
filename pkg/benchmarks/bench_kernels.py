#!/usr/bin/env python3
"""Benchmark the compiled query kernels against the pure-Python fallback.

Both implementations run the same workloads on the same structures; results
are asserted identical before timing. Run from the repository root:

    python benchmarks/bench_kernels.py [--n 20000] [--queries 2000]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from loamkit.index import IncrementalKdTree, StaticKdTree
from loamkit.kernels import _fallback
from loamkit.mapping import OctreeIndex

try:
    from loamkit.kernels import _native
except ImportError:
    _native = None


def timeit(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_static(n, q, k, rng, rows):
    pts = rng.random((n, 3)) * 40
    queries = np.ascontiguousarray(rng.random((q, 3)) * 40)
    tree = StaticKdTree(pts)
    args = (tree._pts, tree._idx, tree._left, tree._right, tree._start,
            tree._end, tree._bbmin, tree._bbmax, queries, k, np.inf)
    out_i = np.empty((q, k), np.int64)
    out_d = np.empty((q, k), np.float64)
    ref_i = np.empty((q, k), np.int64)
    ref_d = np.empty((q, k), np.float64)
    _fallback.kd_knn(*args, ref_i, ref_d)
    t_py = timeit(lambda: _fallback.kd_knn(*args, ref_i, ref_d), repeats=1)
    t_cy = None
    if _native is not None:
        _native.kd_knn(*args, out_i, out_d)
        assert np.array_equal(out_i, ref_i) and np.array_equal(out_d, ref_d)
        t_cy = timeit(lambda: _native.kd_knn(*args, out_i, out_d))
    rows.append((f"static kd kNN (n={n}, q={q}, k={k})", t_py, t_cy))


def bench_ikd(n, q, k, rng, rows):
    tree = IncrementalKdTree(rng.random((n, 3)) * 40)
    tree.delete_box([0, 0, 0], [10, 10, 10])
    queries = np.ascontiguousarray(rng.random((q, 3)) * 40)
    args = (tree._pts, tree._seq, tree._left, tree._right, tree._deleted,
            tree._treedel, tree._bbmin, tree._bbmax, int(tree._root),
            queries, k, np.inf)
    out_i = np.empty((q, k), np.int32)
    out_d = np.empty((q, k), np.float64)
    ref_i = np.empty((q, k), np.int32)
    ref_d = np.empty((q, k), np.float64)
    _fallback.ikd_knn(*args, ref_i, ref_d)
    t_py = timeit(lambda: _fallback.ikd_knn(*args, ref_i, ref_d), repeats=1)
    t_cy = None
    if _native is not None:
        _native.ikd_knn(*args, out_i, out_d)
        assert np.array_equal(out_i, ref_i) and np.array_equal(out_d, ref_d)
        t_cy = timeit(lambda: _native.ikd_knn(*args, out_i, out_d))
    rows.append((f"ikd kNN w/ lazy deletes (n={n}, q={q}, k={k})", t_py, t_cy))


def bench_ikd_build(n, rng, rows):
    pts = np.ascontiguousarray(rng.random((n, 3)) * 40)
    seqs = np.arange(n, dtype=np.int64)

    def build(mod):
        t_pts = np.empty((n, 3)); t_seq = np.empty(n, np.int64)
        t_src = np.empty(n, np.int32)
        t_l = np.empty(n, np.int32); t_r = np.empty(n, np.int32)
        t_ax = np.empty(n, np.int32); t_sz = np.empty(n, np.int32)
        t_ni = np.empty(n, np.int32)
        t_bl = np.empty((n, 3)); t_bh = np.empty((n, 3))
        mod.ikd_build(pts, seqs, t_pts, t_seq, t_src, t_l, t_r, t_ax,
                      t_sz, t_ni, t_bl, t_bh)
        return t_l, t_r, t_seq

    ref = build(_fallback)
    t_py = timeit(lambda: build(_fallback), repeats=1)
    t_cy = None
    if _native is not None:
        got = build(_native)
        for a, b in zip(ref, got):
            assert np.array_equal(a, b)
        t_cy = timeit(lambda: build(_native))
    rows.append((f"ikd balanced build (n={n})", t_py, t_cy))


def bench_octree(n, q, k, rng, rows):
    pts = rng.random((n, 3)) * 40
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    oct_ = OctreeIndex(center=[20, 20, 20], root_half=25.0, leaf_size=0.05)
    oct_.insert(pts, nrm, np.arange(n, dtype=np.int64))
    queries = np.ascontiguousarray(rng.random((q, 3)) * 40)
    args = (oct_._child, oct_._bbmin, oct_._bbmax, oct_._leaf_head,
            oct_._ppts, oct_._pseq, oct_._pnext, 0, queries, k, np.inf)
    out_i = np.empty((q, k), np.int32)
    out_d = np.empty((q, k), np.float64)
    ref_i = np.empty((q, k), np.int32)
    ref_d = np.empty((q, k), np.float64)
    _fallback.oct_knn(*args, ref_i, ref_d)
    t_py = timeit(lambda: _fallback.oct_knn(*args, ref_i, ref_d), repeats=1)
    t_cy = None
    if _native is not None:
        _native.oct_knn(*args, out_i, out_d)
        assert np.array_equal(out_i, ref_i) and np.array_equal(out_d, ref_d)
        t_cy = timeit(lambda: _native.oct_knn(*args, out_i, out_d))
    rows.append((f"octree kNN (n={n}, q={q}, k={k})", t_py, t_cy))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--queries", type=int, default=2000)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    rows: list[tuple[str, float, float | None]] = []
    bench_static(args.n, args.queries, args.k, rng, rows)
    bench_ikd(args.n, args.queries, args.k, rng, rows)
    bench_ikd_build(args.n, rng, rows)
    bench_octree(args.n, args.queries, args.k, rng, rows)

    print(f"{'workload':48s} {'pure':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, t_py, t_cy in rows:
        if t_cy is None:
            print(f"{name:48s} {t_py*1e3:9.1f}ms {'n/a':>10s}")
        else:
            print(f"{name:48s} {t_py*1e3:9.1f}ms {t_cy*1e3:9.2f}ms {t_py/t_cy:7.1f}x")
    if _native is None:
        print("\ncompiled kernels unavailable; showing fallback only")


if __name__ == "__main__":
    main()
