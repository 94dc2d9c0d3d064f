# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled query kernels; mirrors ``_fallback`` exactly (see its docstring
for the array layout contracts). Results are identical to the fallback,
including tie handling: candidates are ordered by (squared distance,
insertion id).
"""

import numpy as np

from libc.math cimport INFINITY

cdef int STACK_CAP = 2048

ctypedef long long i64
ctypedef unsigned char u8


cdef inline double _bbox_min_d2(double qx, double qy, double qz,
                                const double[:, ::1] bbmin,
                                const double[:, ::1] bbmax, int node) nogil:
    cdef double dx = 0.0, dy = 0.0, dz = 0.0, t
    t = bbmin[node, 0] - qx
    if t > dx: dx = t
    t = qx - bbmax[node, 0]
    if t > dx: dx = t
    t = bbmin[node, 1] - qy
    if t > dy: dy = t
    t = qy - bbmax[node, 1]
    if t > dy: dy = t
    t = bbmin[node, 2] - qz
    if t > dz: dz = t
    t = qz - bbmax[node, 2]
    if t > dz: dz = t
    return dx * dx + dy * dy + dz * dz


cdef inline int _topk_push(double* best_d2, i64* best_id, int* best_slot,
                           int count, int k, double d2, i64 pid, int slot) nogil:
    """Insert (d2, pid, slot) into sorted top-k arrays; returns new count."""
    cdef int i
    if count == k and (d2 > best_d2[k - 1] or (d2 == best_d2[k - 1] and pid >= best_id[k - 1])):
        return count
    i = count if count < k else k - 1
    while i > 0 and (best_d2[i - 1] > d2 or (best_d2[i - 1] == d2 and best_id[i - 1] > pid)):
        best_d2[i] = best_d2[i - 1]
        best_id[i] = best_id[i - 1]
        best_slot[i] = best_slot[i - 1]
        i -= 1
    best_d2[i] = d2
    best_id[i] = pid
    best_slot[i] = slot
    return count + 1 if count < k else count


# ---------------------------------------------------------------------------
# static kd-tree
# ---------------------------------------------------------------------------

cdef int _kd_knn_one(const double[:, ::1] pts, const i64[::1] idx,
                     const int[::1] left, const int[::1] right,
                     const int[::1] start, const int[::1] end,
                     const double[:, ::1] bbmin, const double[:, ::1] bbmax,
                     double qx, double qy, double qz, int k, double max_d2,
                     double* best_d2, i64* best_id, int* best_slot,
                     int* stack) nogil:
    cdef int count = 0, top = 0, node, l, r, j
    cdef double worst, d2, dx, dy, dz, dl, dr
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        worst = best_d2[k - 1] if count == k else max_d2
        if _bbox_min_d2(qx, qy, qz, bbmin, bbmax, node) > worst:
            continue
        l = left[node]
        if l < 0:
            for j in range(start[node], end[node]):
                dx = pts[j, 0] - qx
                dy = pts[j, 1] - qy
                dz = pts[j, 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 <= max_d2:
                    count = _topk_push(best_d2, best_id, best_slot, count, k, d2, idx[j], j)
        else:
            r = right[node]
            dl = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, l)
            dr = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, r)
            if top + 2 > STACK_CAP:
                return -1
            if dl <= dr:
                stack[top] = r
                stack[top + 1] = l
            else:
                stack[top] = l
                stack[top + 1] = r
            top += 2
    return count


def kd_knn(const double[:, ::1] pts, const i64[::1] idx,
           const int[::1] left, const int[::1] right,
           const int[::1] start, const int[::1] end,
           const double[:, ::1] bbmin, const double[:, ::1] bbmax,
           const double[:, ::1] queries, int k, double max_d2,
           i64[:, ::1] out_idx, double[:, ::1] out_d2):
    cdef Py_ssize_t nq = queries.shape[0]
    counts_arr = np.zeros(nq, dtype=np.int32)
    cdef int[::1] counts = counts_arr
    out_idx[:, :] = -1
    out_d2[:, :] = np.inf
    if left.shape[0] == 0 or nq == 0:
        return counts_arr
    buf_d2 = np.empty(k, dtype=np.float64)
    buf_id = np.empty(k, dtype=np.int64)
    buf_slot = np.empty(k, dtype=np.int32)
    stack_arr = np.empty(STACK_CAP, dtype=np.int32)
    cdef double[::1] bd2 = buf_d2
    cdef i64[::1] bid = buf_id
    cdef int[::1] bslot = buf_slot
    cdef int[::1] stack = stack_arr
    cdef Py_ssize_t qi
    cdef int c, i
    with nogil:
        for qi in range(nq):
            for i in range(k):
                bd2[i] = INFINITY
                bid[i] = -1
            c = _kd_knn_one(pts, idx, left, right, start, end, bbmin, bbmax,
                            queries[qi, 0], queries[qi, 1], queries[qi, 2],
                            k, max_d2, &bd2[0], &bid[0], &bslot[0], &stack[0])
            if c < 0:
                with gil:
                    raise RuntimeError("kd_knn traversal stack overflow")
            counts[qi] = c
            for i in range(c):
                out_idx[qi, i] = bid[i]
                out_d2[qi, i] = bd2[i]
    return counts_arr


def kd_radius(const double[:, ::1] pts, const i64[::1] idx,
              const int[::1] left, const int[::1] right,
              const int[::1] start, const int[::1] end,
              const double[:, ::1] bbmin, const double[:, ::1] bbmax,
              const double[::1] query, double r2,
              i64[::1] out_idx, double[::1] out_d2):
    if left.shape[0] == 0:
        return 0
    cdef double qx = query[0], qy = query[1], qz = query[2]
    cdef double dx, dy, dz, d2
    cdef int count = 0, top = 0, node, l, j
    stack_arr = np.empty(STACK_CAP, dtype=np.int32)
    cdef int[::1] stack = stack_arr
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _bbox_min_d2(qx, qy, qz, bbmin, bbmax, node) > r2:
            continue
        l = left[node]
        if l < 0:
            for j in range(start[node], end[node]):
                dx = pts[j, 0] - qx
                dy = pts[j, 1] - qy
                dz = pts[j, 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 <= r2:
                    out_idx[count] = idx[j]
                    out_d2[count] = d2
                    count += 1
        else:
            if top + 2 > STACK_CAP:
                raise RuntimeError("kd_radius traversal stack overflow")
            stack[top] = right[node]
            stack[top + 1] = l
            top += 2
    return count


# ---------------------------------------------------------------------------
# incremental kd-tree
# ---------------------------------------------------------------------------

cdef inline bint _pt_less(const double[:, ::1] pts, const i64[::1] seq,
                          int ax, int a, int b) nogil:
    if pts[a, ax] < pts[b, ax]:
        return True
    if pts[a, ax] > pts[b, ax]:
        return False
    return seq[a] < seq[b]


cdef void _sort_perm(int* perm, int lo, int hi,
                     const double[:, ::1] pts, const i64[::1] seq, int ax) nogil:
    """Quicksort perm[lo:hi) by (coordinate along ax, insertion id)."""
    cdef int i, j, p, tmp, mid
    while hi - lo > 16:
        mid = lo + (hi - lo) // 2
        # median-of-three pivot, moved to hi-1
        if _pt_less(pts, seq, ax, perm[mid], perm[lo]):
            tmp = perm[lo]; perm[lo] = perm[mid]; perm[mid] = tmp
        if _pt_less(pts, seq, ax, perm[hi - 1], perm[lo]):
            tmp = perm[lo]; perm[lo] = perm[hi - 1]; perm[hi - 1] = tmp
        if _pt_less(pts, seq, ax, perm[hi - 1], perm[mid]):
            tmp = perm[mid]; perm[mid] = perm[hi - 1]; perm[hi - 1] = tmp
        tmp = perm[mid]; perm[mid] = perm[hi - 2]; perm[hi - 2] = tmp
        p = perm[hi - 2]
        i = lo
        j = hi - 2
        while True:
            i += 1
            while _pt_less(pts, seq, ax, perm[i], p):
                i += 1
            j -= 1
            while _pt_less(pts, seq, ax, p, perm[j]):
                j -= 1
            if i >= j:
                break
            tmp = perm[i]; perm[i] = perm[j]; perm[j] = tmp
        tmp = perm[i]; perm[i] = perm[hi - 2]; perm[hi - 2] = tmp
        # recurse on the smaller side, loop on the larger
        if i - lo < hi - i:
            _sort_perm(perm, lo, i, pts, seq, ax)
            lo = i + 1
        else:
            _sort_perm(perm, i + 1, hi, pts, seq, ax)
            hi = i
    for i in range(lo + 1, hi):
        tmp = perm[i]
        j = i
        while j > lo and _pt_less(pts, seq, ax, tmp, perm[j - 1]):
            perm[j] = perm[j - 1]
            j -= 1
        perm[j] = tmp


cdef int _ikd_build_rec(const double[:, ::1] in_pts, const i64[::1] in_seq,
                        int* perm, int lo, int hi, int* next_slot,
                        double[:, ::1] node_pts, i64[::1] node_seq,
                        int[::1] node_src,
                        int[::1] left, int[::1] right, int[::1] axis,
                        int[::1] size, int[::1] ninv,
                        double[:, ::1] bbmin, double[:, ::1] bbmax) nogil:
    cdef int slot = next_slot[0]
    next_slot[0] += 1
    cdef double lo_x, lo_y, lo_z, hi_x, hi_y, hi_z, ex, ey, ez
    cdef int i, p, ax, mid
    p = perm[lo]
    lo_x = hi_x = in_pts[p, 0]
    lo_y = hi_y = in_pts[p, 1]
    lo_z = hi_z = in_pts[p, 2]
    for i in range(lo + 1, hi):
        p = perm[i]
        if in_pts[p, 0] < lo_x: lo_x = in_pts[p, 0]
        if in_pts[p, 0] > hi_x: hi_x = in_pts[p, 0]
        if in_pts[p, 1] < lo_y: lo_y = in_pts[p, 1]
        if in_pts[p, 1] > hi_y: hi_y = in_pts[p, 1]
        if in_pts[p, 2] < lo_z: lo_z = in_pts[p, 2]
        if in_pts[p, 2] > hi_z: hi_z = in_pts[p, 2]
    bbmin[slot, 0] = lo_x; bbmin[slot, 1] = lo_y; bbmin[slot, 2] = lo_z
    bbmax[slot, 0] = hi_x; bbmax[slot, 1] = hi_y; bbmax[slot, 2] = hi_z
    ex = hi_x - lo_x; ey = hi_y - lo_y; ez = hi_z - lo_z
    ax = 0
    if ey > ex:
        ax = 1
        ex = ey
    if ez > ex:
        ax = 2
    _sort_perm(perm, lo, hi, in_pts, in_seq, ax)
    mid = lo + (hi - lo) // 2
    p = perm[mid]
    node_pts[slot, 0] = in_pts[p, 0]
    node_pts[slot, 1] = in_pts[p, 1]
    node_pts[slot, 2] = in_pts[p, 2]
    node_seq[slot] = in_seq[p]
    node_src[slot] = p
    axis[slot] = ax
    size[slot] = hi - lo
    ninv[slot] = 0
    if mid > lo:
        left[slot] = _ikd_build_rec(in_pts, in_seq, perm, lo, mid, next_slot,
                                    node_pts, node_seq, node_src, left, right,
                                    axis, size, ninv, bbmin, bbmax)
    else:
        left[slot] = -1
    if mid + 1 < hi:
        right[slot] = _ikd_build_rec(in_pts, in_seq, perm, mid + 1, hi, next_slot,
                                     node_pts, node_seq, node_src, left, right,
                                     axis, size, ninv, bbmin, bbmax)
    else:
        right[slot] = -1
    return slot


def ikd_build(const double[:, ::1] in_pts, const i64[::1] in_seq,
              double[:, ::1] node_pts, i64[::1] node_seq, int[::1] node_src,
              int[::1] left, int[::1] right, int[::1] axis,
              int[::1] size, int[::1] ninv,
              double[:, ::1] bbmin, double[:, ::1] bbmax):
    cdef int n = <int> in_pts.shape[0]
    if n == 0:
        return 0
    perm_arr = np.arange(n, dtype=np.int32)
    cdef int[::1] perm = perm_arr
    cdef int next_slot = 0
    with nogil:
        _ikd_build_rec(in_pts, in_seq, &perm[0], 0, n, &next_slot,
                       node_pts, node_seq, node_src, left, right, axis, size,
                       ninv, bbmin, bbmax)
    return n


def ikd_insert(double[:, ::1] pts, i64[::1] seq,
               int[::1] left, int[::1] right, int[::1] axis,
               int[::1] size, int[::1] ninv,
               u8[::1] deleted, u8[::1] treedel, u8[::1] dirty,
               double[:, ::1] bbmin, double[:, ::1] bbmax, int root,
               const double[:, ::1] batch_pts, const i64[::1] batch_seq,
               const int[::1] slots):
    """Mirror of the fallback ikd_insert: sequential descend-and-attach."""
    cdef Py_ssize_t n = batch_pts.shape[0]
    cdef Py_ssize_t i
    cdef int cur, nxt, ax, s, ch_l, ch_r
    cdef double x, y, z
    cdef bint go_left
    with nogil:
        for i in range(n):
            x = batch_pts[i, 0]
            y = batch_pts[i, 1]
            z = batch_pts[i, 2]
            cur = root
            while True:
                if treedel[cur]:
                    ch_l = left[cur]
                    ch_r = right[cur]
                    if ch_l >= 0:
                        treedel[ch_l] = 1
                        deleted[ch_l] = 1
                        ninv[ch_l] = size[ch_l]
                    if ch_r >= 0:
                        treedel[ch_r] = 1
                        deleted[ch_r] = 1
                        ninv[ch_r] = size[ch_r]
                    deleted[cur] = 1
                    treedel[cur] = 0
                dirty[cur] = 1
                size[cur] += 1
                if x < bbmin[cur, 0]: bbmin[cur, 0] = x
                elif x > bbmax[cur, 0]: bbmax[cur, 0] = x
                if y < bbmin[cur, 1]: bbmin[cur, 1] = y
                elif y > bbmax[cur, 1]: bbmax[cur, 1] = y
                if z < bbmin[cur, 2]: bbmin[cur, 2] = z
                elif z > bbmax[cur, 2]: bbmax[cur, 2] = z
                ax = axis[cur]
                go_left = batch_pts[i, ax] < pts[cur, ax]
                nxt = left[cur] if go_left else right[cur]
                if nxt < 0:
                    s = slots[i]
                    pts[s, 0] = x
                    pts[s, 1] = y
                    pts[s, 2] = z
                    seq[s] = batch_seq[i]
                    left[s] = -1
                    right[s] = -1
                    axis[s] = 0
                    size[s] = 1
                    ninv[s] = 0
                    deleted[s] = 0
                    treedel[s] = 0
                    dirty[s] = 0
                    bbmin[s, 0] = x
                    bbmin[s, 1] = y
                    bbmin[s, 2] = z
                    bbmax[s, 0] = x
                    bbmax[s, 1] = y
                    bbmax[s, 2] = z
                    if go_left:
                        left[cur] = s
                    else:
                        right[cur] = s
                    break
                cur = nxt
    return 0


cdef int _ikd_knn_one(const double[:, ::1] pts, const i64[::1] seq,
                      const int[::1] left, const int[::1] right,
                      const u8[::1] deleted, const u8[::1] treedel,
                      const double[:, ::1] bbmin, const double[:, ::1] bbmax,
                      int root, double qx, double qy, double qz,
                      int k, double max_d2,
                      double* best_d2, i64* best_id, int* best_slot,
                      int* stack) nogil:
    cdef int count = 0, top = 0, node, l, r
    cdef double worst, d2, dx, dy, dz, dl, dr
    stack[top] = root
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if treedel[node]:
            continue
        worst = best_d2[k - 1] if count == k else max_d2
        if _bbox_min_d2(qx, qy, qz, bbmin, bbmax, node) > worst:
            continue
        if not deleted[node]:
            dx = pts[node, 0] - qx
            dy = pts[node, 1] - qy
            dz = pts[node, 2] - qz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 <= max_d2:
                count = _topk_push(best_d2, best_id, best_slot, count, k, d2, seq[node], node)
        l = left[node]
        r = right[node]
        if l >= 0 and r >= 0:
            if top + 2 > STACK_CAP:
                return -1
            dl = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, l)
            dr = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, r)
            if dl <= dr:
                stack[top] = r
                stack[top + 1] = l
            else:
                stack[top] = l
                stack[top + 1] = r
            top += 2
        elif l >= 0:
            if top + 1 > STACK_CAP:
                return -1
            stack[top] = l
            top += 1
        elif r >= 0:
            if top + 1 > STACK_CAP:
                return -1
            stack[top] = r
            top += 1
    return count


def ikd_knn(const double[:, ::1] pts, const i64[::1] seq,
            const int[::1] left, const int[::1] right,
            const u8[::1] deleted, const u8[::1] treedel,
            const double[:, ::1] bbmin, const double[:, ::1] bbmax,
            int root, const double[:, ::1] queries, int k, double max_d2,
            int[:, ::1] out_slot, double[:, ::1] out_d2):
    cdef Py_ssize_t nq = queries.shape[0]
    counts_arr = np.zeros(nq, dtype=np.int32)
    cdef int[::1] counts = counts_arr
    out_slot[:, :] = -1
    out_d2[:, :] = np.inf
    if root < 0 or nq == 0:
        return counts_arr
    buf_d2 = np.empty(k, dtype=np.float64)
    buf_id = np.empty(k, dtype=np.int64)
    buf_slot = np.empty(k, dtype=np.int32)
    stack_arr = np.empty(STACK_CAP, dtype=np.int32)
    cdef double[::1] bd2 = buf_d2
    cdef i64[::1] bid = buf_id
    cdef int[::1] bslot = buf_slot
    cdef int[::1] stack = stack_arr
    cdef Py_ssize_t qi
    cdef int c, i
    with nogil:
        for qi in range(nq):
            for i in range(k):
                bd2[i] = INFINITY
                bid[i] = -1
            c = _ikd_knn_one(pts, seq, left, right, deleted, treedel,
                             bbmin, bbmax, root,
                             queries[qi, 0], queries[qi, 1], queries[qi, 2],
                             k, max_d2, &bd2[0], &bid[0], &bslot[0], &stack[0])
            if c < 0:
                with gil:
                    raise RuntimeError("ikd_knn traversal stack overflow")
            counts[qi] = c
            for i in range(c):
                out_slot[qi, i] = bslot[i]
                out_d2[qi, i] = bd2[i]
    return counts_arr


def ikd_radius(const double[:, ::1] pts, const i64[::1] seq,
               const int[::1] left, const int[::1] right,
               const u8[::1] deleted, const u8[::1] treedel,
               const double[:, ::1] bbmin, const double[:, ::1] bbmax,
               int root, const double[::1] query, double r2,
               int[::1] out_slot, double[::1] out_d2):
    if root < 0:
        return 0
    cdef double qx = query[0], qy = query[1], qz = query[2]
    cdef double dx, dy, dz, d2
    cdef int count = 0, top = 0, node
    stack_arr = np.empty(STACK_CAP, dtype=np.int32)
    cdef int[::1] stack = stack_arr
    stack[top] = root
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if treedel[node]:
            continue
        if _bbox_min_d2(qx, qy, qz, bbmin, bbmax, node) > r2:
            continue
        if not deleted[node]:
            dx = pts[node, 0] - qx
            dy = pts[node, 1] - qy
            dz = pts[node, 2] - qz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 <= r2:
                out_slot[count] = node
                out_d2[count] = d2
                count += 1
        if top + 2 > STACK_CAP:
            raise RuntimeError("ikd_radius traversal stack overflow")
        if left[node] >= 0:
            stack[top] = left[node]
            top += 1
        if right[node] >= 0:
            stack[top] = right[node]
            top += 1
    return count


cdef bint _rb_violates(const int[::1] left, const int[::1] right,
                       const int[::1] size, const int[::1] ninv, int n,
                       double alpha_bal, double alpha_del, int min_balance) nogil:
    cdef int sz = size[n]
    cdef int iv = ninv[n]
    cdef int alive, c, ca, i
    if iv > alpha_del * sz:
        return True
    alive = sz - iv
    if sz >= min_balance and alive > 0:
        c = left[n]
        ca = size[c] - ninv[c] if c >= 0 else 0
        if ca > alpha_bal * alive:
            return True
        c = right[n]
        ca = size[c] - ninv[c] if c >= 0 else 0
        if ca > alpha_bal * alive:
            return True
    return False


cdef int _rb_find(const int[::1] left, const int[::1] right,
                  const int[::1] size, const int[::1] ninv, u8[::1] dirty,
                  int node, int depth, double alpha_bal, double alpha_del,
                  int min_balance, int[::1] out_path) nogil:
    cdef int r
    if node < 0 or not dirty[node]:
        return 0
    if depth >= out_path.shape[0]:
        return -1
    out_path[depth] = node
    if _rb_violates(left, right, size, ninv, node, alpha_bal, alpha_del, min_balance):
        return depth + 1
    r = _rb_find(left, right, size, ninv, dirty, left[node], depth + 1,
                 alpha_bal, alpha_del, min_balance, out_path)
    if r != 0:
        return r
    r = _rb_find(left, right, size, ninv, dirty, right[node], depth + 1,
                 alpha_bal, alpha_del, min_balance, out_path)
    if r != 0:
        return r
    dirty[node] = 0
    return 0


def ikd_rebalance_find(const int[::1] left, const int[::1] right,
                       const int[::1] size, const int[::1] ninv,
                       u8[::1] dirty, int root,
                       double alpha_bal, double alpha_del, int min_balance,
                       int[::1] out_path):
    cdef int r
    with nogil:
        r = _rb_find(left, right, size, ninv, dirty, root, 0,
                     alpha_bal, alpha_del, min_balance, out_path)
    if r < 0:
        raise RuntimeError("ikd_rebalance_find path overflow")
    return r


def ikd_collect(const int[::1] left, const int[::1] right,
                const u8[::1] deleted, const u8[::1] treedel,
                int root, int[::1] out_slot, u8[::1] out_alive):
    if root < 0:
        return 0
    cdef int count = 0, top = 0, node
    cdef u8 anc, sub
    n = left.shape[0]
    stack_arr = np.empty(max(int(n) + 1, STACK_CAP), dtype=np.int32)
    anc_arr = np.empty(max(int(n) + 1, STACK_CAP), dtype=np.uint8)
    cdef int[::1] stack = stack_arr
    cdef u8[::1] ancs = anc_arr
    stack[top] = root
    ancs[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        anc = ancs[top]
        sub = 1 if (anc or treedel[node]) else 0
        out_slot[count] = node
        out_alive[count] = 0 if (sub or deleted[node]) else 1
        count += 1
        if left[node] >= 0:
            stack[top] = left[node]
            ancs[top] = sub
            top += 1
        if right[node] >= 0:
            stack[top] = right[node]
            ancs[top] = sub
            top += 1
    return count


# ---------------------------------------------------------------------------
# octree
# ---------------------------------------------------------------------------

cdef int _oct_knn_one(const int[:, ::1] child, const double[:, ::1] bbmin,
                      const double[:, ::1] bbmax, const int[::1] leaf_head,
                      const double[:, ::1] ppts, const i64[::1] pseq,
                      const int[::1] pnext, int root,
                      double qx, double qy, double qz, int k, double max_d2,
                      double* best_d2, i64* best_id, int* best_pid,
                      int* stack) nogil:
    cdef int count = 0, top = 0, node, c, i, j, p, nkids, tmp
    cdef double worst, d2, dx, dy, dz
    cdef int kids[8]
    cdef double kd2[8]
    stack[top] = root
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        worst = best_d2[k - 1] if count == k else max_d2
        if _bbox_min_d2(qx, qy, qz, bbmin, bbmax, node) > worst:
            continue
        nkids = 0
        for i in range(8):
            c = child[node, i]
            if c >= 0:
                kids[nkids] = c
                kd2[nkids] = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, c)
                nkids += 1
        if nkids > 0:
            # push far-to-near so the nearest child pops first
            for i in range(1, nkids):
                j = i
                while j > 0 and kd2[j - 1] < kd2[j]:
                    d2 = kd2[j - 1]; kd2[j - 1] = kd2[j]; kd2[j] = d2
                    tmp = kids[j - 1]; kids[j - 1] = kids[j]; kids[j] = tmp
                    j -= 1
            if top + nkids > STACK_CAP:
                return -1
            for i in range(nkids):
                stack[top] = kids[i]
                top += 1
        else:
            p = leaf_head[node]
            while p >= 0:
                dx = ppts[p, 0] - qx
                dy = ppts[p, 1] - qy
                dz = ppts[p, 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 <= max_d2:
                    count = _topk_push(best_d2, best_id, best_pid, count, k, d2, pseq[p], p)
                p = pnext[p]
    return count


def oct_knn(const int[:, ::1] child, const double[:, ::1] bbmin,
            const double[:, ::1] bbmax, const int[::1] leaf_head,
            const double[:, ::1] ppts, const i64[::1] pseq,
            const int[::1] pnext, int root,
            const double[:, ::1] queries, int k, double max_d2,
            int[:, ::1] out_pid, double[:, ::1] out_d2):
    cdef Py_ssize_t nq = queries.shape[0]
    counts_arr = np.zeros(nq, dtype=np.int32)
    cdef int[::1] counts = counts_arr
    out_pid[:, :] = -1
    out_d2[:, :] = np.inf
    if root < 0 or nq == 0:
        return counts_arr
    buf_d2 = np.empty(k, dtype=np.float64)
    buf_id = np.empty(k, dtype=np.int64)
    buf_pid = np.empty(k, dtype=np.int32)
    stack_arr = np.empty(STACK_CAP, dtype=np.int32)
    cdef double[::1] bd2 = buf_d2
    cdef i64[::1] bid = buf_id
    cdef int[::1] bpid = buf_pid
    cdef int[::1] stack = stack_arr
    cdef Py_ssize_t qi
    cdef int c, i
    with nogil:
        for qi in range(nq):
            for i in range(k):
                bd2[i] = INFINITY
                bid[i] = -1
            c = _oct_knn_one(child, bbmin, bbmax, leaf_head, ppts, pseq, pnext,
                             root, queries[qi, 0], queries[qi, 1], queries[qi, 2],
                             k, max_d2, &bd2[0], &bid[0], &bpid[0], &stack[0])
            if c < 0:
                with gil:
                    raise RuntimeError("oct_knn traversal stack overflow")
            counts[qi] = c
            for i in range(c):
                out_pid[qi, i] = bpid[i]
                out_d2[qi, i] = bd2[i]
    return counts_arr


def oct_collect(const int[:, ::1] child, const int[::1] leaf_head,
                const int[::1] pnext, int root, int[::1] out_pid):
    if root < 0:
        return 0
    cdef int count = 0, top = 0, node, i, c, p
    cdef bint has_child
    n = child.shape[0]
    stack_arr = np.empty(max(int(n) + 8, STACK_CAP), dtype=np.int32)
    cdef int[::1] stack = stack_arr
    stack[top] = root
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        has_child = False
        for i in range(8):
            c = child[node, i]
            if c >= 0:
                has_child = True
                stack[top] = c
                top += 1
        if not has_child:
            p = leaf_head[node]
            while p >= 0:
                out_pid[count] = p
                count += 1
                p = pnext[p]
    return count
