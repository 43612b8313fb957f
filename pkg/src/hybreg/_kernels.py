"""Compiled loss, gradient and optimizer kernels.

Parameter vectors (``kind`` codes):

* 0 hybrid: ``(v0, v1, v2, theta, u0, u1, u2, d_u)``
* 1 Euler:  ``(a, b, c, u0, u1, u2, d_u)``
* 2 6-D:    ``(a0, a1, a2, b0, b1, b2, u0, u1, u2, d_u)``

The last four entries are always the translation block. Correspondence
arrays have four rows: 3D, then the xy, yz and xz projections.
"""

import math

import numpy as np
from numba import njit

from ._kdtree import LEAF_SIZE, brute_nearest, build_tree, query

HYBRID, EULER, SIXD = 0, 1, 2
SIGMOID, SIN, CLAMP = 0, 1, 2
PLAIN_GD, ADAPTIVE = 0, 1

RUNNING, CONVERGED, FAILED, MAX_ITERS = 0, 1, 2, 3

_AXES = ((0, 1), (1, 2), (0, 2))


@njit(cache=True)
def param_dim(kind):
    if kind == HYBRID:
        return 8
    if kind == EULER:
        return 7
    return 10


@njit(cache=True)
def trim_count(alpha, n):
    # the epsilon absorbs products such as 0.7 * 10 = 7.000000000000001
    k = int(math.ceil(alpha * n - 1e-9))
    if k < 1:
        k = 1
    if k > n:
        k = n
    return k


@njit(cache=True)
def _skew_dot(G, a):
    # d/da of sum(G * skew(a))
    return np.array([G[2, 1] - G[1, 2], G[0, 2] - G[2, 0], G[1, 0] - G[0, 1]])


@njit(cache=True)
def _rot_hybrid(x):
    v = x[0:3]
    nv = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    a = v / nv
    c = math.cos(x[3])
    s = math.sin(x[3])
    R = np.empty((3, 3))
    oc = 1.0 - c
    R[0, 0] = c + oc * a[0] * a[0]
    R[0, 1] = oc * a[0] * a[1] - s * a[2]
    R[0, 2] = oc * a[0] * a[2] + s * a[1]
    R[1, 0] = oc * a[1] * a[0] + s * a[2]
    R[1, 1] = c + oc * a[1] * a[1]
    R[1, 2] = oc * a[1] * a[2] - s * a[0]
    R[2, 0] = oc * a[2] * a[0] - s * a[1]
    R[2, 1] = oc * a[2] * a[1] + s * a[0]
    R[2, 2] = c + oc * a[2] * a[2]
    return R


@njit(cache=True)
def _euler_factors(x):
    ca, sa = math.cos(x[0]), math.sin(x[0])
    cb, sb = math.cos(x[1]), math.sin(x[1])
    cc, sc = math.cos(x[2]), math.sin(x[2])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    Ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    Rz = np.array([[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]])
    dRx = np.array([[0.0, 0.0, 0.0], [0.0, -sa, -ca], [0.0, ca, -sa]])
    dRy = np.array([[-sb, 0.0, cb], [0.0, 0.0, 0.0], [-cb, 0.0, -sb]])
    dRz = np.array([[-sc, -cc, 0.0], [cc, -sc, 0.0], [0.0, 0.0, 0.0]])
    return Rx, Ry, Rz, dRx, dRy, dRz


@njit(cache=True)
def _sixd_frame(x):
    a1 = x[0:3]
    a2 = x[3:6]
    n1 = math.sqrt(a1 @ a1)
    b1 = a1 / n1
    w = a2 - (b1 @ a2) * b1
    nw = math.sqrt(w @ w)
    b2 = w / nw
    b3 = np.cross(b1, b2)
    return b1, b2, b3, n1, w, nw


@njit(cache=True)
def rotation(kind, x):
    if kind == HYBRID:
        return _rot_hybrid(x)
    if kind == EULER:
        Rx, Ry, Rz, _, _, _ = _euler_factors(x)
        return Rz @ (Ry @ Rx)
    b1, b2, b3, _, _, _ = _sixd_frame(x)
    R = np.empty((3, 3))
    R[0] = b1
    R[1] = b2
    R[2] = b3
    return R


@njit(cache=True)
def _frob(A, B):
    s = 0.0
    for i in range(3):
        for j in range(3):
            s += A[i, j] * B[i, j]
    return s


@njit(cache=True)
def rotation_grad(kind, x, G):
    """Chain dL/dR = G through the rotation block of ``x``."""
    if kind == HYBRID:
        v = x[0:3]
        nv = math.sqrt(v @ v)
        a = v / nv
        c = math.cos(x[3])
        s = math.sin(x[3])
        out = np.empty(4)
        # dR/dtheta = -s I + s a a^T + c skew(a)
        Ga = G @ a
        tr = G[0, 0] + G[1, 1] + G[2, 2]
        out[3] = -s * tr + s * (a @ Ga) + c * (_skew_dot(G, a) @ a)
        ga = (1.0 - c) * (Ga + G.T @ a) + s * _skew_dot(G, a)
        gv = (ga - a * (a @ ga)) / nv
        out[0:3] = gv
        return out
    if kind == EULER:
        Rx, Ry, Rz, dRx, dRy, dRz = _euler_factors(x)
        out = np.empty(3)
        out[0] = _frob(G, Rz @ (Ry @ dRx))
        out[1] = _frob(G, Rz @ (dRy @ Rx))
        out[2] = _frob(G, dRz @ (Ry @ Rx))
        return out
    b1, b2, b3, n1, w, nw = _sixd_frame(x)
    a2 = x[3:6]
    g1 = G[0] + np.cross(b2, G[2])
    g2 = G[1] + np.cross(G[2], b1)
    gw = (g2 - b2 * (b2 @ g2)) / nw
    ga2 = gw - b1 * (b1 @ gw)
    g1 = g1 - ((b1 @ a2) * gw + (b1 @ gw) * a2)
    ga1 = (g1 - b1 * (b1 @ g1)) / n1
    out = np.empty(6)
    out[0:3] = ga1
    out[3:6] = ga2
    return out


@njit(cache=True)
def dist_map(d, d_max, mapping):
    """Return (m(d), m'(d))."""
    if mapping == SIN:
        return 0.5 * d_max * (1.0 + math.sin(d)), 0.5 * d_max * math.cos(d)
    if mapping == SIGMOID:
        if d >= 0:
            s = 1.0 / (1.0 + math.exp(-d))
        else:
            e = math.exp(d)
            s = e / (1.0 + e)
        return d_max * s, d_max * s * (1.0 - s)
    if d <= 0.0:
        return 0.0, 0.0
    if d >= d_max:
        return d_max, 0.0
    return d, 1.0


@njit(cache=True)
def translation(xt, d_max, mapping):
    u = xt[0:3]
    nu = math.sqrt(u @ u)
    m, _ = dist_map(xt[3], d_max, mapping)
    return (u / nu) * m


@njit(cache=True)
def translation_grad(xt, d_max, mapping, gT):
    u = xt[0:3]
    nu = math.sqrt(u @ u)
    uh = u / nu
    m, dm = dist_map(xt[3], d_max, mapping)
    out = np.empty(4)
    out[0:3] = m * (gT - uh * (uh @ gT)) / nu
    out[3] = dm * (uh @ gT)
    return out


@njit(cache=True)
def transform_points(src, R, T):
    n = src.shape[0]
    X = np.empty((n, 3))
    for i in range(n):
        for r in range(3):
            X[i, r] = R[r, 0] * src[i, 0] + R[r, 1] * src[i, 1] + R[r, 2] * src[i, 2] + T[r]
    return X


# -- correspondences ---------------------------------------------------------

@njit(cache=True)
def correspond_brute(X, Q):
    n = X.shape[0]
    m = Q.shape[0]
    fi = np.empty((4, n), dtype=np.int64)
    fd = np.empty((4, n))
    ri = np.zeros((4, m), dtype=np.int64)
    rd = np.full((4, m), np.inf)
    r0, r1, r2, r3 = rd[0], rd[1], rd[2], rd[3]
    i0, i1, i2, i3 = ri[0], ri[1], ri[2], ri[3]
    qx = Q[:, 0].copy()
    qy = Q[:, 1].copy()
    qz = Q[:, 2].copy()
    for i in range(n):
        xx = X[i, 0]
        xy = X[i, 1]
        xz = X[i, 2]
        b0 = np.inf
        b1 = np.inf
        b2 = np.inf
        b3 = np.inf
        j0 = 0
        j1 = 0
        j2 = 0
        j3 = 0
        for j in range(m):
            dx = xx - qx[j]
            dy = xy - qy[j]
            dz = xz - qz[j]
            sx = dx * dx
            sy = dy * dy
            sz = dz * dz
            d0 = sx + sy + sz
            d1 = sx + sy
            d2 = sy + sz
            d3 = sx + sz
            # strict < keeps the first (smallest) index on ties
            if d0 < b0:
                b0 = d0
                j0 = j
            if d1 < b1:
                b1 = d1
                j1 = j
            if d2 < b2:
                b2 = d2
                j2 = j
            if d3 < b3:
                b3 = d3
                j3 = j
            if d0 < r0[j]:
                r0[j] = d0
                i0[j] = i
            if d1 < r1[j]:
                r1[j] = d1
                i1[j] = i
            if d2 < r2[j]:
                r2[j] = d2
                i2[j] = i
            if d3 < r3[j]:
                r3[j] = d3
                i3[j] = i
        fd[0, i] = b0
        fd[1, i] = b1
        fd[2, i] = b2
        fd[3, i] = b3
        fi[0, i] = j0
        fi[1, i] = j1
        fi[2, i] = j2
        fi[3, i] = j3
    return fi, fd, ri, rd


@njit(cache=True)
def project(P, c):
    a, b = _AXES[c]
    out = np.empty((P.shape[0], 2))
    for i in range(P.shape[0]):
        out[i, 0] = P[i, a]
        out[i, 1] = P[i, b]
    return out


@njit(cache=True)
def correspond_tree(X, Q, qtrees):
    """Tree-backed correspondences; ``qtrees`` holds the 3D and three planar trees of Q."""
    n = X.shape[0]
    m = Q.shape[0]
    fi = np.empty((4, n), dtype=np.int64)
    fd = np.empty((4, n))
    ri = np.empty((4, m), dtype=np.int64)
    rd = np.empty((4, m))
    t3, txy, tyz, txz = qtrees
    query(t3, X, fi[0], fd[0])
    xt = build_tree(X, LEAF_SIZE)
    query(xt, Q, ri[0], rd[0])
    for c in range(3):
        Xp = project(X, c)
        if c == 0:
            query(txy, Xp, fi[1], fd[1])
            qp = txy[0]
        elif c == 1:
            query(tyz, Xp, fi[2], fd[2])
            qp = tyz[0]
        else:
            query(txz, Xp, fi[3], fd[3])
            qp = txz[0]
        pt = build_tree(Xp, LEAF_SIZE)
        query(pt, qp, ri[c + 1], rd[c + 1])
    return fi, fd, ri, rd


@njit(cache=True)
def build_trees(Q):
    return (build_tree(Q, LEAF_SIZE), build_tree(project(Q, 0), LEAF_SIZE),
            build_tree(project(Q, 1), LEAF_SIZE), build_tree(project(Q, 2), LEAF_SIZE))


@njit(cache=True)
def correspond(X, Q, qtrees, use_tree):
    if use_tree:
        return correspond_tree(X, Q, qtrees)
    return correspond_brute(X, Q)


# -- losses -------------------------------------------------------------------

@njit(cache=True)
def seq_sum(d):
    s = 0.0
    for i in range(d.shape[0]):
        s += d[i]
    return s


@njit(cache=True)
def trim_mask(d, alpha):
    n = d.shape[0]
    k = trim_count(alpha, n)
    mask = np.zeros(n, dtype=np.bool_)
    if k == n:
        mask[:] = True
        return mask, k
    order = np.argsort(d, kind="mergesort")
    for t in range(k):
        mask[order[t]] = True
    return mask, k


@njit(cache=True)
def masked_sum(d, mask):
    s = 0.0
    for i in range(d.shape[0]):
        if mask[i]:
            s += d[i]
    return s


@njit(cache=True)
def loss_from_corr(X, src, Q, fi, fd, ri, rd, alpha, beta, want_grad):
    """Loss parts (local, xy, yz, xz, total) and dL/dR, dL/dT for fixed correspondences."""
    n = X.shape[0]
    m = Q.shape[0]
    mp, kp = trim_mask(fd[0], alpha)
    mq, kq = trim_mask(rd[0], alpha)
    parts = np.empty(5)
    parts[0] = masked_sum(fd[0], mp) / kp + masked_sum(rd[0], mq) / kq
    for c in range(1, 4):
        parts[c] = seq_sum(fd[c]) / n + seq_sum(rd[c]) / m
    parts[4] = parts[0] + beta * ((parts[1] + parts[2]) + parts[3])
    GR = np.zeros((3, 3))
    GT = np.zeros(3)
    if not want_grad:
        return parts, GR, GT
    r = np.empty(3)
    # forward: x_i against its match in Q
    for i in range(n):
        for c in range(4):
            if c == 0:
                if not mp[i]:
                    continue
                w = 2.0 / kp
            else:
                w = 2.0 * beta / n
                if w == 0.0:
                    continue
            j = fi[c, i]
            for a in range(3):
                r[a] = X[i, a] - Q[j, a]
            if c > 0:
                a0, a1 = _AXES[c - 1]
                for a in range(3):
                    if a != a0 and a != a1:
                        r[a] = 0.0
            for a in range(3):
                GT[a] += w * r[a]
                for b in range(3):
                    GR[a, b] += w * r[a] * src[i, b]
    # reverse: q_j against its match among transformed source points
    for j in range(m):
        for c in range(4):
            if c == 0:
                if not mq[j]:
                    continue
                w = 2.0 / kq
            else:
                w = 2.0 * beta / m
                if w == 0.0:
                    continue
            i = ri[c, j]
            for a in range(3):
                r[a] = X[i, a] - Q[j, a]
            if c > 0:
                a0, a1 = _AXES[c - 1]
                for a in range(3):
                    if a != a0 and a != a1:
                        r[a] = 0.0
            for a in range(3):
                GT[a] += w * r[a]
                for b in range(3):
                    GR[a, b] += w * r[a] * src[i, b]
    return parts, GR, GT


@njit(cache=True)
def params_to_RT(kind, x, d_max, mapping):
    D = param_dim(kind)
    R = rotation(kind, x)
    T = translation(x[D - 4:D], d_max, mapping)
    return R, T


@njit(cache=True)
def evaluate(kind, x, src, Q, qtrees, use_tree, alpha, beta, d_max, mapping, want_grad):
    """Loss parts and gradient with respect to the full parameter vector."""
    D = param_dim(kind)
    R, T = params_to_RT(kind, x, d_max, mapping)
    X = transform_points(src, R, T)
    fi, fd, ri, rd = correspond(X, Q, qtrees, use_tree)
    parts, GR, GT = loss_from_corr(X, src, Q, fi, fd, ri, rd, alpha, beta, want_grad)
    g = np.zeros(D)
    if want_grad:
        g[0:D - 4] = rotation_grad(kind, x, GR)
        g[D - 4:D] = translation_grad(x[D - 4:D], d_max, mapping, GT)
    return parts, g


@njit(cache=True)
def frozen_loss(kind, x, src, Q, fi, ri, alpha, beta, d_max, mapping, keep_p, keep_q):
    """Loss at ``x`` with correspondences and trim sets held fixed (gradient checks)."""
    R, T = params_to_RT(kind, x, d_max, mapping)
    X = transform_points(src, R, T)
    n = X.shape[0]
    m = Q.shape[0]
    fd = np.empty((4, n))
    rd = np.empty((4, m))
    for c in range(4):
        for i in range(n):
            j = fi[c, i]
            s = 0.0
            for a in range(3):
                if c == 0 or a == _AXES[c - 1][0] or a == _AXES[c - 1][1]:
                    t = X[i, a] - Q[j, a]
                    s += t * t
            fd[c, i] = s
        for j in range(m):
            i = ri[c, j]
            s = 0.0
            for a in range(3):
                if c == 0 or a == _AXES[c - 1][0] or a == _AXES[c - 1][1]:
                    t = X[i, a] - Q[j, a]
                    s += t * t
            rd[c, j] = s
    local = masked_sum(fd[0], keep_p) / keep_p.sum() + masked_sum(rd[0], keep_q) / keep_q.sum()
    proj = 0.0
    for c in range(1, 4):
        proj += seq_sum(fd[c]) / n + seq_sum(rd[c]) / m
    return local + beta * proj


# -- optimizer ----------------------------------------------------------------

@njit(cache=True)
def _finite(g):
    for i in range(g.shape[0]):
        if not np.isfinite(g[i]):
            return False
    return True


@njit(cache=True)
def _project_params(kind, x, d_max, mapping):
    D = param_dim(kind)
    if mapping == CLAMP:
        if x[D - 1] < 0.0:
            x[D - 1] = 0.0
        elif x[D - 1] > d_max:
            x[D - 1] = d_max


@njit(cache=True)
def init_state(kind, X0, src, Q, qtrees, use_tree, alpha, beta, d_max, mapping, lr0, max_iters):
    S, D = X0.shape
    x = X0.copy()
    g = np.zeros((S, D))
    m1 = np.zeros((S, D))
    m2 = np.zeros((S, D))
    t = np.zeros(S, dtype=np.int64)
    lr = np.full(S, lr0)
    loss = np.full(S, np.inf)
    status = np.zeros(S, dtype=np.int64)
    iters = np.zeros(S, dtype=np.int64)
    n_evals = np.zeros(S, dtype=np.int64)
    trace = np.full((S, max_iters + 1), np.nan)
    for s in range(S):
        _project_params(kind, x[s], d_max, mapping)
        parts, gs = evaluate(kind, x[s], src, Q, qtrees, use_tree, alpha, beta, d_max, mapping, True)
        n_evals[s] += 1
        loss[s] = parts[4]
        g[s] = gs
        trace[s, 0] = parts[4]
        if not (np.isfinite(parts[4]) and _finite(gs)):
            status[s] = FAILED
    return x, g, m1, m2, t, lr, loss, status, iters, n_evals, trace


@njit(cache=True)
def advance(kind, state, active, n_steps, src, Q, qtrees, use_tree, alpha, beta, d_max,
            mapping, optimizer, beta1, beta2, eps, gtol, tol, patience, max_halvings, max_iters):
    """Run up to ``n_steps`` safeguarded first-order steps on every active start."""
    x, g, m1, m2, t, lr, loss, status, iters, n_evals, trace = state
    S, D = x.shape
    for s in range(S):
        if not active[s]:
            continue
        for _ in range(n_steps):
            if status[s] != RUNNING:
                break
            if iters[s] >= max_iters:
                status[s] = MAX_ITERS
                break
            gn = math.sqrt(g[s] @ g[s])
            if gn <= gtol:
                status[s] = CONVERGED
                break
            accepted = False
            lr0 = lr[s]
            for attempt in range(2):
                if attempt == 1:
                    if optimizer != ADAPTIVE:
                        break
                    # stale momentum may not point downhill: restart the moments
                    t[s] = 0
                    m1[s] = 0.0
                    m2[s] = 0.0
                    lr[s] = lr0
                if optimizer == ADAPTIVE:
                    t[s] += 1
                    m1[s] = beta1 * m1[s] + (1.0 - beta1) * g[s]
                    m2[s] = beta2 * m2[s] + (1.0 - beta2) * g[s] * g[s]
                    bc1 = 1.0 - beta1 ** t[s]
                    bc2 = 1.0 - beta2 ** t[s]
                    direction = (m1[s] / bc1) / (np.sqrt(m2[s] / bc2) + eps)
                else:
                    direction = g[s].copy()
                for h in range(max_halvings + 1):
                    if h > 0:
                        lr[s] *= 0.5
                    xn = x[s] - lr[s] * direction
                    _project_params(kind, xn, d_max, mapping)
                    parts, gs = evaluate(kind, xn, src, Q, qtrees, use_tree, alpha, beta,
                                         d_max, mapping, True)
                    n_evals[s] += 1
                    ln = parts[4]
                    if np.isfinite(ln) and _finite(gs) and ln <= loss[s]:
                        accepted = True
                        break
                if accepted:
                    break
            if not accepted:
                # no descent even at 2^-max_halvings of a fresh step: local minimum
                status[s] = CONVERGED
                break
            x[s] = xn
            g[s] = gs
            loss[s] = ln
            iters[s] += 1
            trace[s, iters[s]] = ln
            k = iters[s]
            if patience > 0 and k >= patience:
                prev = trace[s, k - patience]
                if prev - ln <= tol * max(prev, 1e-300):
                    status[s] = CONVERGED
                    break
        if status[s] == RUNNING and iters[s] >= max_iters:
            status[s] = MAX_ITERS
