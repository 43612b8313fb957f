"""Compiled kd-tree and brute-force nearest-neighbour kernels.

A tree is a plain tuple of arrays so it can cross the numba boundary:

    (pts, perm, lo, hi, start, end, left, right)

``pts`` is a contiguous (n, k) copy of the indexed coordinates, ``perm`` the
point order after partitioning, ``lo``/``hi`` per-node bounding boxes and
``left``/``right`` child ids (-1 marks a leaf). Squared distances are summed
coordinate by coordinate in ascending axis order so that results are
bit-identical to a naive double loop. Ties resolve to the smallest index.
"""

import numpy as np
from numba import njit

LEAF_SIZE = 8


@njit(cache=True)
def build_tree(pts, leaf_size):
    n, k = pts.shape
    pts = np.ascontiguousarray(pts)
    perm = np.arange(n)
    max_nodes = 2 * (n // max(leaf_size // 2, 1)) + 3
    lo = np.empty((max_nodes, k))
    hi = np.empty((max_nodes, k))
    start = np.empty(max_nodes, dtype=np.int64)
    end = np.empty(max_nodes, dtype=np.int64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)

    n_nodes = 1
    start[0] = 0
    end[0] = n
    stack = np.empty(max_nodes, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        s = start[node]
        e = end[node]
        for d in range(k):
            mn = pts[perm[s], d]
            mx = mn
            for t in range(s + 1, e):
                c = pts[perm[t], d]
                if c < mn:
                    mn = c
                if c > mx:
                    mx = c
            lo[node, d] = mn
            hi[node, d] = mx
        if e - s <= leaf_size:
            continue
        dim = 0
        spread = hi[node, 0] - lo[node, 0]
        for d in range(1, k):
            if hi[node, d] - lo[node, d] > spread:
                spread = hi[node, d] - lo[node, d]
                dim = d
        if spread == 0.0:
            # all points coincide; keep as an oversized leaf
            continue
        seg = perm[s:e].copy()
        vals = np.empty(e - s)
        for t in range(e - s):
            vals[t] = pts[seg[t], dim]
        order = np.argsort(vals, kind="mergesort")
        for t in range(e - s):
            perm[s + t] = seg[order[t]]
        mid = (s + e) // 2
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        start[lc] = s
        end[lc] = mid
        start[rc] = mid
        end[rc] = e
        left[node] = lc
        right[node] = rc
        stack[top] = lc
        stack[top + 1] = rc
        top += 2
    return (pts, perm, lo[:n_nodes].copy(), hi[:n_nodes].copy(),
            start[:n_nodes].copy(), end[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy())


@njit(cache=True)
def _box_dist(q, lo, hi, node, k):
    s = 0.0
    for d in range(k):
        if q[d] < lo[node, d]:
            t = lo[node, d] - q[d]
            s += t * t
        elif q[d] > hi[node, d]:
            t = q[d] - hi[node, d]
            s += t * t
    return s


@njit(cache=True)
def query_one(tree, q):
    return _query_one(tree, q, np.empty(128, dtype=np.int64), np.empty(128))


@njit(cache=True)
def _query_one(tree, q, stack, stack_d):
    # stack use is bounded by tree depth + 1 (median splits), far below 128
    pts, perm, lo, hi, start, end, left, right = tree
    k = pts.shape[1]
    best_i = -1
    best_d = np.inf
    stack[0] = 0
    stack_d[0] = _box_dist(q, lo, hi, 0, k)
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        # strict: a box at exactly best_d may still hold a smaller tied index
        if stack_d[top] > best_d:
            continue
        if left[node] < 0:
            for t in range(start[node], end[node]):
                i = perm[t]
                dd = 0.0
                for d in range(k):
                    diff = q[d] - pts[i, d]
                    dd += diff * diff
                if dd < best_d or (dd == best_d and i < best_i):
                    best_d = dd
                    best_i = i
            continue
        a = left[node]
        b = right[node]
        da = _box_dist(q, lo, hi, a, k)
        db = _box_dist(q, lo, hi, b, k)
        # push the farther child first so the nearer one is popped next
        if da <= db:
            stack[top] = b
            stack_d[top] = db
            stack[top + 1] = a
            stack_d[top + 1] = da
        else:
            stack[top] = a
            stack_d[top] = da
            stack[top + 1] = b
            stack_d[top + 1] = db
        top += 2
    return best_i, best_d


@njit(cache=True)
def query(tree, queries, out_idx, out_d):
    stack = np.empty(128, dtype=np.int64)
    stack_d = np.empty(128)
    for j in range(queries.shape[0]):
        i, d = _query_one(tree, queries[j], stack, stack_d)
        out_idx[j] = i
        out_d[j] = d


@njit(cache=True)
def brute_nearest(pts, queries, out_idx, out_d):
    n, k = pts.shape
    for j in range(queries.shape[0]):
        best_i = -1
        best_d = np.inf
        for i in range(n):
            dd = 0.0
            for d in range(k):
                diff = queries[j, d] - pts[i, d]
                dd += diff * diff
            if dd < best_d:
                best_d = dd
                best_i = i
        out_idx[j] = best_i
        out_d[j] = best_d
