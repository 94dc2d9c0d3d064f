"""Pure-Python query kernels; reference semantics for the compiled module.

The spatial structures are stored as flat numpy arrays owned by the Python
classes in ``loamkit.index`` and ``loamkit.mapping``; these functions only
read (or, for the builders, fill) them. ``loamkit.kernels._native``
implements the same functions in Cython with identical results, including
distance ties, which are always broken by ascending insertion id.

Array layout contracts:

static kd-tree (bucketed leaves, points reordered leaf-contiguously)
    pts (n,3) reordered points; idx (n,) original index per slot;
    left/right (m,) child node ids, -1 for leaf; start/end (m,) leaf slot
    range; bbmin/bbmax (m,3) node bounding boxes. Node 0 is the root.

incremental kd-tree (one point per node)
    pts (cap,3); seq (cap,) insertion ids; left/right (cap,) child slots or
    -1; deleted/treedel (cap,) u8 lazy-deletion labels; bbmin/bbmax (cap,3)
    subtree bounds (conservative: may cover already-deleted points).

octree (points in per-leaf linked chains)
    child (m,8) child slots or -1; ccen (m,3) cell centers; half (m,) cell
    half-sides; leaf_head (m,) first point slot of a leaf chain or -1;
    ppts (pcap,3); pseq (pcap,); pnext (pcap,) chain links.
"""

from __future__ import annotations

import numpy as np


def _push(best_d2, best_id, count, k, d2, pid):
    """Insert (d2, pid) into the sorted top-k arrays; returns new count."""
    if count == k and (d2 > best_d2[k - 1] or (d2 == best_d2[k - 1] and pid >= best_id[k - 1])):
        return count
    i = count if count < k else k - 1
    while i > 0 and (best_d2[i - 1] > d2 or (best_d2[i - 1] == d2 and best_id[i - 1] > pid)):
        best_d2[i] = best_d2[i - 1]
        best_id[i] = best_id[i - 1]
        i -= 1
    best_d2[i] = d2
    best_id[i] = pid
    return count + 1 if count < k else count


def _bbox_min_d2(qx, qy, qz, bbmin, bbmax, node):
    dx = max(bbmin[node, 0] - qx, 0.0, qx - bbmax[node, 0])
    dy = max(bbmin[node, 1] - qy, 0.0, qy - bbmax[node, 1])
    dz = max(bbmin[node, 2] - qz, 0.0, qz - bbmax[node, 2])
    return dx * dx + dy * dy + dz * dz


def kd_knn(pts, idx, left, right, start, end, bbmin, bbmax,
           queries, k, max_d2, out_idx, out_d2):
    """Batched kNN on a static kd-tree.

    Fills out_idx/out_d2 (q, k) sorted by (d2, original index); returns a
    (q,) count array. Candidates with d2 > max_d2 are excluded.
    """
    counts = np.zeros(len(queries), dtype=np.int32)
    out_idx[:] = -1
    out_d2[:] = np.inf
    if len(left) == 0:
        return counts
    for qi in range(len(queries)):
        qx, qy, qz = queries[qi]
        best_d2 = [np.inf] * k
        best_id = [-1] * k
        count = 0
        stack = [0]
        while stack:
            node = stack.pop()
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
                        count = _push(best_d2, best_id, count, k, d2, idx[j])
            else:
                r = right[node]
                dl = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, l)
                dr = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, r)
                if dl <= dr:
                    stack.append(r)
                    stack.append(l)
                else:
                    stack.append(l)
                    stack.append(r)
        counts[qi] = count
        for i in range(count):
            out_idx[qi, i] = best_id[i]
            out_d2[qi, i] = best_d2[i]
    return counts


def kd_radius(pts, idx, left, right, start, end, bbmin, bbmax,
              query, r2, out_idx, out_d2):
    """All points within squared radius r2 of one query; returns count.

    Output is in traversal order; callers canonicalize by (d2, idx).
    """
    if len(left) == 0:
        return 0
    qx, qy, qz = query
    count = 0
    stack = [0]
    while stack:
        node = stack.pop()
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
            stack.append(right[node])
            stack.append(l)
    return count


def ikd_build(in_pts, in_seq, node_pts, node_seq, node_src, left, right, axis,
              size, ninv, bbmin, bbmax):
    """Build a balanced subtree over the input points into slots [0, n).

    The median point along the longest bbox dimension becomes each node
    (ties in the split coordinate broken by insertion id, so the layout is a
    pure function of the point multiset). Slot 0 is the subtree root;
    children are allocated preorder. ``node_src`` records which input row
    landed in each slot so callers can scatter parallel payloads. Returns
    the number of slots used.
    """
    n = len(in_pts)
    if n == 0:
        return 0
    next_slot = [0]

    def build(members):
        slot = next_slot[0]
        next_slot[0] += 1
        sub = in_pts[members]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        bbmin[slot] = lo
        bbmax[slot] = hi
        ax = int(np.argmax(hi - lo))
        srt = members[np.lexsort((in_seq[members], in_pts[members, ax]))]
        mid = len(srt) // 2
        node_pts[slot] = in_pts[srt[mid]]
        node_seq[slot] = in_seq[srt[mid]]
        node_src[slot] = srt[mid]
        axis[slot] = ax
        size[slot] = len(members)
        ninv[slot] = 0
        left[slot] = build(srt[:mid]) if mid > 0 else -1
        right[slot] = build(srt[mid + 1:]) if mid + 1 < len(srt) else -1
        return slot

    build(np.arange(n))
    return n


def ikd_insert(pts, seq, left, right, axis, size, ninv, deleted, treedel,
               dirty, bbmin, bbmax, root, batch_pts, batch_seq, slots):
    """Sequentially descend-and-attach each batch point at its leaf position.

    ``slots[i]`` is the pre-allocated node slot for batch point i. Subtree
    sizes, bounds and dirty flags update along each descent path; lazy
    subtree-delete labels are pushed down one level before descending into
    them. Rebalancing is the caller's follow-up pass over dirty nodes.
    """
    n = len(batch_pts)
    for i in range(n):
        x = batch_pts[i, 0]
        y = batch_pts[i, 1]
        z = batch_pts[i, 2]
        cur = root
        while True:
            if treedel[cur]:
                for ch in (left[cur], right[cur]):
                    if ch >= 0:
                        treedel[ch] = 1
                        deleted[ch] = 1
                        ninv[ch] = size[ch]
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
                bbmin[s] = (x, y, z)
                bbmax[s] = (x, y, z)
                if go_left:
                    left[cur] = s
                else:
                    right[cur] = s
                break
            cur = nxt
    return 0


def ikd_knn(pts, seq, left, right, deleted, treedel, bbmin, bbmax,
            root, queries, k, max_d2, out_slot, out_d2):
    """Batched kNN over alive points of an incremental kd-tree.

    Returns (q,) counts; out_slot holds node slots sorted by (d2, seq).
    """
    counts = np.zeros(len(queries), dtype=np.int32)
    out_slot[:] = -1
    out_d2[:] = np.inf
    if root < 0:
        return counts
    for qi in range(len(queries)):
        qx, qy, qz = queries[qi]
        best_d2 = [np.inf] * k
        best_id = [-1] * k
        best_slot = [-1] * k
        count = 0
        stack = [root]
        while stack:
            node = stack.pop()
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
                    if count < k or d2 < best_d2[k - 1] or (d2 == best_d2[k - 1] and seq[node] < best_id[k - 1]):
                        i = count if count < k else k - 1
                        while i > 0 and (best_d2[i - 1] > d2 or (best_d2[i - 1] == d2 and best_id[i - 1] > seq[node])):
                            best_d2[i] = best_d2[i - 1]
                            best_id[i] = best_id[i - 1]
                            best_slot[i] = best_slot[i - 1]
                            i -= 1
                        best_d2[i] = d2
                        best_id[i] = seq[node]
                        best_slot[i] = node
                        if count < k:
                            count += 1
            l, r = left[node], right[node]
            if l >= 0 and r >= 0:
                dl = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, l)
                dr = _bbox_min_d2(qx, qy, qz, bbmin, bbmax, r)
                if dl <= dr:
                    stack.append(r)
                    stack.append(l)
                else:
                    stack.append(l)
                    stack.append(r)
            elif l >= 0:
                stack.append(l)
            elif r >= 0:
                stack.append(r)
        counts[qi] = count
        for i in range(count):
            out_slot[qi, i] = best_slot[i]
            out_d2[qi, i] = best_d2[i]
    return counts


def ikd_radius(pts, seq, left, right, deleted, treedel, bbmin, bbmax,
               root, query, r2, out_slot, out_d2):
    """Alive points within squared radius r2 of one query; returns count."""
    if root < 0:
        return 0
    qx, qy, qz = query
    count = 0
    stack = [root]
    while stack:
        node = stack.pop()
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
        if left[node] >= 0:
            stack.append(left[node])
        if right[node] >= 0:
            stack.append(right[node])
    return count


def ikd_rebalance_find(left, right, size, ninv, dirty, root,
                       alpha_bal, alpha_del, min_balance, out_path):
    """Locate the topmost criterion-violating node along dirty paths.

    Returns the length of the root-to-violator path written into out_path
    (0 when no dirty node violates). Subtrees verified clean get their dirty
    flags cleared; flags above a found violator stay set so repeated calls
    make progress until the tree is fully rebalanced.
    """
    def violates(n):
        sz = int(size[n])
        iv = int(ninv[n])
        if iv > alpha_del * sz:
            return True
        alive = sz - iv
        if sz >= min_balance and alive > 0:
            for c in (left[n], right[n]):
                ca = int(size[c]) - int(ninv[c]) if c >= 0 else 0
                if ca > alpha_bal * alive:
                    return True
        return False

    def rec(node, depth):
        if node < 0 or not dirty[node]:
            return 0
        out_path[depth] = node
        if violates(node):
            return depth + 1
        r = rec(left[node], depth + 1)
        if r:
            return r
        r = rec(right[node], depth + 1)
        if r:
            return r
        dirty[node] = 0
        return 0

    return rec(root, 0)


def ikd_collect(left, right, deleted, treedel, root, out_slot, out_alive):
    """Collect every slot of a subtree with an alive flag; returns count."""
    if root < 0:
        return 0
    count = 0
    stack = [(root, False)]
    while stack:
        node, anc_del = stack.pop()
        sub_del = anc_del or bool(treedel[node])
        out_slot[count] = node
        out_alive[count] = 0 if (sub_del or deleted[node]) else 1
        count += 1
        if left[node] >= 0:
            stack.append((left[node], sub_del))
        if right[node] >= 0:
            stack.append((right[node], sub_del))
    return count


def oct_knn(child, bbmin, bbmax, leaf_head, ppts, pseq, pnext,
            root, queries, k, max_d2, out_pid, out_d2):
    """Batched kNN over an octree; out_pid holds point slots, ties by pseq.

    Pruning uses per-node content bounding boxes, which are exact point
    bounds, so tie candidates are never skipped.
    """
    counts = np.zeros(len(queries), dtype=np.int32)
    out_pid[:] = -1
    out_d2[:] = np.inf
    if root < 0:
        return counts
    for qi in range(len(queries)):
        qx, qy, qz = queries[qi]
        best_d2 = [np.inf] * k
        best_id = [-1] * k
        best_pid = [-1] * k
        count = 0
        stack = [root]
        while stack:
            node = stack.pop()
            worst = best_d2[k - 1] if count == k else max_d2
            if _bbox_min_d2(qx, qy, qz, bbmin, bbmax, node) > worst:
                continue
            kids = [c for c in child[node] if c >= 0]
            if kids:
                kids.sort(key=lambda c: _bbox_min_d2(qx, qy, qz, bbmin, bbmax, c), reverse=True)
                stack.extend(kids)
            else:
                p = leaf_head[node]
                while p >= 0:
                    dx = ppts[p, 0] - qx
                    dy = ppts[p, 1] - qy
                    dz = ppts[p, 2] - qz
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 <= max_d2:
                        if count < k or d2 < best_d2[k - 1] or (d2 == best_d2[k - 1] and pseq[p] < best_id[k - 1]):
                            i = count if count < k else k - 1
                            while i > 0 and (best_d2[i - 1] > d2 or (best_d2[i - 1] == d2 and best_id[i - 1] > pseq[p])):
                                best_d2[i] = best_d2[i - 1]
                                best_id[i] = best_id[i - 1]
                                best_pid[i] = best_pid[i - 1]
                                i -= 1
                            best_d2[i] = d2
                            best_id[i] = pseq[p]
                            best_pid[i] = p
                            if count < k:
                                count += 1
                    p = pnext[p]
        counts[qi] = count
        for i in range(count):
            out_pid[qi, i] = best_pid[i]
            out_d2[qi, i] = best_d2[i]
    return counts


def oct_collect(child, leaf_head, pnext, root, out_pid):
    """Collect every point slot stored in the octree; returns count."""
    if root < 0:
        return 0
    count = 0
    stack = [root]
    while stack:
        node = stack.pop()
        has_child = False
        for c in child[node]:
            if c >= 0:
                has_child = True
                stack.append(c)
        if not has_child:
            p = leaf_head[node]
            while p >= 0:
                out_pid[count] = p
                count += 1
                p = pnext[p]
    return count
