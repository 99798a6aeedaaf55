# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False, nonecheck=False
"""Compiled hot kernels.

Every function here has a numpy twin with the same signature in
:mod:`surfgbpm._fallback`; :mod:`surfgbpm.kernels` picks one at import.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, exp, floor, cos, sin, M_PI
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cnp.import_array()

ctypedef cnp.int64_t i64


# ---------------------------------------------------------------------------
# small dense pseudo-inverse (one-sided Jacobi SVD)
# ---------------------------------------------------------------------------

cdef int _pinv_tall(const double* A, int m, int n, double rcond, double* out,
                    double* U, double* V, double* sig) noexcept nogil:
    """Pseudo-inverse of row-major ``A`` (m x n, m >= n) into ``out`` (n x m)."""
    cdef int i, j, k, sweep, rotated, rank
    cdef double alpha, beta, gamma, zeta, t, c, s, tmp, smax, cut, acc

    memcpy(U, A, m * n * sizeof(double))
    for i in range(n * n):
        V[i] = 0.0
    for i in range(n):
        V[i * n + i] = 1.0

    for sweep in range(60):
        rotated = 0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    alpha += U[k * n + i] * U[k * n + i]
                    beta += U[k * n + j] * U[k * n + j]
                    gamma += U[k * n + i] * U[k * n + j]
                if gamma == 0.0 or fabs(gamma) <= 1e-15 * sqrt(alpha * beta):
                    continue
                rotated = 1
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    tmp = U[k * n + i]
                    U[k * n + i] = c * tmp - s * U[k * n + j]
                    U[k * n + j] = s * tmp + c * U[k * n + j]
                for k in range(n):
                    tmp = V[k * n + i]
                    V[k * n + i] = c * tmp - s * V[k * n + j]
                    V[k * n + j] = s * tmp + c * V[k * n + j]
        if not rotated:
            break

    smax = 0.0
    for j in range(n):
        acc = 0.0
        for k in range(m):
            acc += U[k * n + j] * U[k * n + j]
        sig[j] = sqrt(acc)
        if sig[j] > smax:
            smax = sig[j]
    cut = rcond * smax
    rank = 0
    for j in range(n):
        if smax > 0.0 and sig[j] > cut:
            rank += 1
            sig[j] = 1.0 / (sig[j] * sig[j])
        else:
            sig[j] = 0.0
    for i in range(n):
        for k in range(m):
            acc = 0.0
            for j in range(n):
                acc += V[i * n + j] * U[k * n + j] * sig[j]
            out[i * m + k] = acc
    return rank


cdef int _pinv_qr(const double* A, int m, int n, double rcond, double* out,
                  double* Q, double* R, double* tau) noexcept nogil:
    """Full-rank fast path for tall ``A`` via Householder QR.

    Returns n on success. Returns -1 when the Frobenius condition bound of R
    cannot certify sigma_min > rcond * sigma_max; the caller then falls back to
    the SVD path, so rank decisions are always the SVD's.
    """
    cdef int i, j, k
    cdef double nrm, alpha, v0, dot, nr, ni, acc
    cdef double* qk
    cdef double* qj
    cdef double* o
    # column-major copy: column k of A is Q[k*m : (k+1)*m]
    for i in range(m):
        for k in range(n):
            Q[k * m + i] = A[i * n + k]
    for k in range(n):
        qk = Q + k * m
        nrm = 0.0
        for i in range(k, m):
            nrm += qk[i] * qk[i]
        nrm = sqrt(nrm)
        if nrm == 0.0:
            return -1
        alpha = -nrm if qk[k] >= 0.0 else nrm
        v0 = qk[k] - alpha
        dot = -2.0 * alpha * v0  # = v^T v
        qk[k] = v0
        tau[k] = 2.0 / dot
        for j in range(k + 1, n):
            qj = Q + j * m
            acc = 0.0
            for i in range(k, m):
                acc += qk[i] * qj[i]
            acc *= tau[k]
            for i in range(k, m):
                qj[i] -= acc * qk[i]
        for j in range(k):
            R[k * n + j] = 0.0
        R[k * n + k] = alpha
    for k in range(n):
        for j in range(k + 1, n):
            R[k * n + j] = Q[j * m + k]
    nr = 0.0
    for i in range(n):
        for j in range(i, n):
            nr += R[i * n + j] * R[i * n + j]
    # R <- R^{-1}; columns right to left so entries left of column j are still R
    for j in range(n - 1, -1, -1):
        R[j * n + j] = 1.0 / R[j * n + j]
        for i in range(j - 1, -1, -1):
            acc = R[i * n + j] * R[j * n + j]
            for k in range(i + 1, j):
                acc += R[i * n + k] * R[k * n + j]
            R[i * n + j] = -acc / R[i * n + i]
    ni = 0.0
    for i in range(n):
        for j in range(i, n):
            ni += R[i * n + j] * R[i * n + j]
    # kappa_2 <= sqrt(nr * ni); certify with a safety factor of 100
    if not (nr * ni * 1e4 * rcond * rcond < 1.0):
        return -1
    # row j of Q1^T is (H_0 ... H_{n-1} e_j)^T; reflectors above j leave e_j alone
    for j in range(n):
        o = out + j * m
        for i in range(m):
            o[i] = 0.0
        o[j] = 1.0
        for k in range(j, -1, -1):
            qk = Q + k * m
            acc = 0.0
            for i in range(k, m):
                acc += qk[i] * o[i]
            acc *= tau[k]
            for i in range(k, m):
                o[i] -= acc * qk[i]
    # out <- R^{-1} out; top-down keeps the rows still to be read intact
    for i in range(n):
        o = out + i * m
        for k in range(m):
            o[k] *= R[i * n + i]
        for j in range(i + 1, n):
            acc = R[i * n + j]
            qj = out + j * m
            for k in range(m):
                o[k] += acc * qj[k]
    return n


cdef int _pinv(const double* A, int m, int n, double rcond, double* out,
               double* work) noexcept nogil:
    """General pseudo-inverse; ``work`` needs 2*m*n + n*n + m*m + m + n doubles."""
    cdef int i, k, rank
    cdef double* T
    cdef double* P
    if m >= n:
        if _pinv_qr(A, m, n, rcond, out, work, work + m * n, work + m * n + n * n) == n:
            return n
        return _pinv_tall(A, m, n, rcond, out, work, work + m * n,
                          work + m * n + n * n)
    # wide: pinv(A) = pinv(A^T)^T
    T = work
    P = work + m * n
    for i in range(m):
        for k in range(n):
            T[k * m + i] = A[i * n + k]
    rank = _pinv_tall(T, n, m, rcond, P, P + m * n, P + 2 * m * n,
                      P + 2 * m * n + m * m)
    for i in range(m):
        for k in range(n):
            out[k * m + i] = P[i * n + k]
    return rank


def pinv_batch(const double[:, :, ::1] A, double rcond):
    """Batched pseudo-inverse with a relative singular-value cutoff.

    Returns ``(P, rank)`` with ``P.shape == (B, n, m)``.
    """
    cdef Py_ssize_t B = A.shape[0], b
    cdef int m = <int>A.shape[1], n = <int>A.shape[2]
    out = np.zeros((B, n, m), dtype=np.float64)
    rank = np.zeros(B, dtype=np.int64)
    cdef double[:, :, ::1] o = out
    cdef i64[::1] r = rank
    cdef double* work = <double*>malloc((2 * m * n + n * n + m * m + m + n + 8) * sizeof(double))
    try:
        with nogil:
            for b in range(B):
                r[b] = _pinv(&A[b, 0, 0], m, n, rcond, &o[b, 0, 0], work)
    finally:
        free(work)
    return out, rank


# ---------------------------------------------------------------------------
# cell-list k nearest neighbours
# ---------------------------------------------------------------------------

cdef inline bint _less(double da, i64 ia, double db, i64 ib) noexcept nogil:
    return da < db or (da == db and ia < ib)


cdef void _heap_push(double* hd, i64* hi, int* cnt, int k, double d, i64 idx) noexcept nogil:
    """Bounded max-heap on (distance, index)."""
    cdef int pos, parent, child, c2
    cdef double td
    cdef i64 ti
    if cnt[0] < k:
        pos = cnt[0]
        cnt[0] += 1
        hd[pos] = d
        hi[pos] = idx
        while pos > 0:
            parent = (pos - 1) >> 1
            if _less(hd[parent], hi[parent], hd[pos], hi[pos]):
                td = hd[parent]; hd[parent] = hd[pos]; hd[pos] = td
                ti = hi[parent]; hi[parent] = hi[pos]; hi[pos] = ti
                pos = parent
            else:
                break
        return
    if not _less(d, idx, hd[0], hi[0]):
        return
    hd[0] = d
    hi[0] = idx
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= k:
            break
        c2 = child + 1
        if c2 < k and _less(hd[child], hi[child], hd[c2], hi[c2]):
            child = c2
        if _less(hd[pos], hi[pos], hd[child], hi[child]):
            td = hd[child]; hd[child] = hd[pos]; hd[pos] = td
            ti = hi[child]; hi[child] = hi[pos]; hi[pos] = ti
            pos = child
        else:
            break


cdef inline i64 _clip(i64 v, i64 hi) noexcept nogil:
    if v < 0:
        return 0
    if v > hi:
        return hi
    return v


def knn(const double[:, ::1] points, const double[:, ::1] queries, int k,
        const double[::1] origin, double dx, const i64[::1] shape,
        int max_shells, const i64[::1] exclude):
    """k nearest ``points`` of every query via shells of grid cells.

    Points are binned to their nearest grid node. Shells are scanned
    outward until the k-th distance is certified or ``max_shells`` is hit.
    ``exclude[q]`` is a point index to skip for query q (-1 for none).
    Returns ``(idx, dist)``; unfilled slots hold -1 / inf.
    """
    cdef Py_ssize_t N = points.shape[0], Q = queries.shape[0]
    cdef i64 nx = shape[0], ny = shape[1], nz = shape[2]
    cdef i64 ncell = nx * ny * nz
    cdef Py_ssize_t p, q, a
    cdef i64 ci, cj, ck, cell, s, di, dj, dk, ii, jj, kk, cur
    cdef double d2, ex, ey, ez
    cdef int cnt, t, u
    cdef double td
    cdef i64 ti

    idx_out = np.full((Q, k), -1, dtype=np.int64)
    dist_out = np.full((Q, k), np.inf, dtype=np.float64)
    cdef i64[:, ::1] io = idx_out
    cdef double[:, ::1] do = dist_out

    head_arr = np.full(ncell, -1, dtype=np.int64)
    nxt_arr = np.full(max(N, 1), -1, dtype=np.int64)
    cdef i64[::1] head = head_arr
    cdef i64[::1] nxt = nxt_arr

    cdef double* hd = <double*>malloc((k + 1) * sizeof(double))
    cdef i64* hi = <i64*>malloc((k + 1) * sizeof(i64))
    try:
        with nogil:
            for a in range(N):
                p = N - 1 - a
                ci = _clip(<i64>floor((points[p, 0] - origin[0]) / dx + 0.5), nx - 1)
                cj = _clip(<i64>floor((points[p, 1] - origin[1]) / dx + 0.5), ny - 1)
                ck = _clip(<i64>floor((points[p, 2] - origin[2]) / dx + 0.5), nz - 1)
                cell = (ci * ny + cj) * nz + ck
                nxt[p] = head[cell]
                head[cell] = p

            for q in range(Q):
                cnt = 0
                ci = _clip(<i64>floor((queries[q, 0] - origin[0]) / dx + 0.5), nx - 1)
                cj = _clip(<i64>floor((queries[q, 1] - origin[1]) / dx + 0.5), ny - 1)
                ck = _clip(<i64>floor((queries[q, 2] - origin[2]) / dx + 0.5), nz - 1)
                for s in range(max_shells + 1):
                    for di in range(-s, s + 1):
                        ii = ci + di
                        if ii < 0 or ii >= nx:
                            continue
                        for dj in range(-s, s + 1):
                            jj = cj + dj
                            if jj < 0 or jj >= ny:
                                continue
                            dk = -s
                            while dk <= s:
                                kk = ck + dk
                                if kk >= 0 and kk < nz:
                                    cur = head[(ii * ny + jj) * nz + kk]
                                    while cur >= 0:
                                        if cur != exclude[q]:
                                            ex = points[cur, 0] - queries[q, 0]
                                            ey = points[cur, 1] - queries[q, 1]
                                            ez = points[cur, 2] - queries[q, 2]
                                            d2 = ex * ex + ey * ey + ez * ez
                                            _heap_push(hd, hi, &cnt, k, d2, cur)
                                        cur = nxt[cur]
                                # interior rows of the shell only need the two caps
                                if di != -s and di != s and dj != -s and dj != s and dk == -s:
                                    dk = s
                                else:
                                    dk += 1
                    if cnt == k and sqrt(hd[0]) < s * dx:
                        break
                # heap -> ascending order (insertion sort, k is small)
                for t in range(1, cnt):
                    td = hd[t]
                    ti = hi[t]
                    u = t - 1
                    while u >= 0 and _less(td, ti, hd[u], hi[u]):
                        hd[u + 1] = hd[u]
                        hi[u + 1] = hi[u]
                        u -= 1
                    hd[u + 1] = td
                    hi[u + 1] = ti
                for t in range(cnt):
                    io[q, t] = hi[t]
                    do[q, t] = sqrt(hd[t])
    finally:
        free(hd)
        free(hi)
    return idx_out, dist_out


# ---------------------------------------------------------------------------
# fused local fits on projected neighbourhoods
# ---------------------------------------------------------------------------

cdef double _scale(const double[:, :, ::1] proj, Py_ssize_t b, int M) noexcept nogil:
    cdef int p
    cdef double s = 0.0, r
    for p in range(M):
        r = sqrt(proj[b, p, 0] * proj[b, p, 0] + proj[b, p, 1] * proj[b, p, 1])
        if r > s:
            s = r
    return s


def poly_stencils(const double[:, :, ::1] proj, const double[:, ::1] c, double rcond):
    """Constrained quadratic least-squares derivative stencils.

    ``proj`` holds local (x, y, z) of M neighbours per centre (centre at the
    origin). Returns ``(W, rank)`` with ``W.shape == (B, 5, M)``; row r of W
    applied to ``value_p - value_0`` gives d/dx, d/dy, d2/dx2, d2/dxdy, d2/dy2.
    """
    cdef Py_ssize_t B = proj.shape[0], b
    cdef int M = <int>proj.shape[1], p, r
    cdef double s, x, y, is1, is2
    cdef double g1[5]
    g1[0] = 1.0; g1[1] = 1.0; g1[2] = 2.0; g1[3] = 1.0; g1[4] = 2.0
    W_arr = np.zeros((B, 5, M), dtype=np.float64)
    rank_arr = np.zeros(B, dtype=np.int64)
    cdef double[:, :, ::1] W = W_arr
    cdef i64[::1] rk = rank_arr
    cdef double* C = <double*>malloc(M * 5 * sizeof(double))
    cdef double* P = <double*>malloc(M * 5 * sizeof(double))
    cdef double* work = <double*>malloc((2 * M * 5 + 25 + M * M + M + 5 + 8) * sizeof(double))
    try:
        with nogil:
            for b in range(B):
                s = _scale(proj, b, M)
                if s == 0.0:
                    rk[b] = 0
                    continue
                for p in range(M):
                    x = proj[b, p, 0] / s
                    y = proj[b, p, 1] / s
                    C[p * 5 + 0] = c[b, p] * x
                    C[p * 5 + 1] = c[b, p] * y
                    C[p * 5 + 2] = c[b, p] * x * x
                    C[p * 5 + 3] = c[b, p] * x * y
                    C[p * 5 + 4] = c[b, p] * y * y
                rk[b] = _pinv(C, M, 5, rcond, P, work)
                is1 = 1.0 / s
                is2 = is1 * is1
                for r in range(5):
                    for p in range(M):
                        W[b, r, p] = g1[r] * P[r * M + p] * (is1 if r < 2 else is2) * c[b, p]
    finally:
        free(C)
        free(P)
        free(work)
    return W_arr, rank_arr


def quad_fits(const double[:, :, ::1] proj, const double[:, ::1] c, double rcond):
    """Weighted 6-term quadratic height fits through neighbours and the centre.

    The centre (origin, height 0) enters as an extra row with weight 1.
    Returns ``(coef, rank)`` with coef = (a00, a10, a01, a20, a11, a02).
    """
    cdef Py_ssize_t B = proj.shape[0], b
    cdef int M = <int>proj.shape[1], p, j, R = M + 1
    cdef double s, x, y, w, acc
    cdef double sc[6]
    coef_arr = np.zeros((B, 6), dtype=np.float64)
    rank_arr = np.zeros(B, dtype=np.int64)
    cdef double[:, ::1] coef = coef_arr
    cdef i64[::1] rk = rank_arr
    cdef double* C = <double*>malloc(R * 6 * sizeof(double))
    cdef double* rhs = <double*>malloc(R * sizeof(double))
    cdef double* P = <double*>malloc(R * 6 * sizeof(double))
    cdef double* work = <double*>malloc((2 * R * 6 + 36 + R * R + R + 6 + 8) * sizeof(double))
    try:
        with nogil:
            for b in range(B):
                s = _scale(proj, b, M)
                if s == 0.0:
                    rk[b] = 0
                    continue
                C[0] = 1.0
                for j in range(1, 6):
                    C[j] = 0.0
                rhs[0] = 0.0
                for p in range(M):
                    w = c[b, p]
                    x = proj[b, p, 0] / s
                    y = proj[b, p, 1] / s
                    C[(p + 1) * 6 + 0] = w
                    C[(p + 1) * 6 + 1] = w * x
                    C[(p + 1) * 6 + 2] = w * y
                    C[(p + 1) * 6 + 3] = w * x * x
                    C[(p + 1) * 6 + 4] = w * x * y
                    C[(p + 1) * 6 + 5] = w * y * y
                    rhs[p + 1] = w * proj[b, p, 2]
                rk[b] = _pinv(C, R, 6, rcond, P, work)
                sc[0] = 1.0
                sc[1] = 1.0 / s
                sc[2] = 1.0 / s
                sc[3] = 1.0 / (s * s)
                sc[4] = sc[3]
                sc[5] = sc[3]
                for j in range(6):
                    acc = 0.0
                    for p in range(R):
                        acc += P[j * R + p] * rhs[p]
                    coef[b, j] = acc * sc[j]
    finally:
        free(C)
        free(rhs)
        free(P)
        free(work)
    return coef_arr, rank_arr


def rbf_stencils(const double[:, :, ::1] proj, const double[:, ::1] c,
                 int n_ghost, double eps_factor, double rcond, int tail=5):
    """Gaussian-RBF ghost-sample-point stencils.

    Ghosts sit on a ring of radius ``r = max|x_p| / 2``; the Gaussian shape
    parameter is ``eps_factor / r``. The polynomial tail holds the first
    ``tail`` monomials of (x, y, x^2, xy, y^2), i.e. 2 (linear) or 5
    (quadratic). Returns ``(W, rank, r)``.
    """
    cdef Py_ssize_t B = proj.shape[0], b
    cdef int M = <int>proj.shape[1], d = n_ghost, p, i, j, row
    cdef int k = tail
    cdef int R = M + k, K = d + k
    cdef double s, x, y, w, gr, eps, e2, e4, phi0, ex, ey, acc
    cdef double is1, is2
    cdef double mono[5]
    cdef double g1[5]
    if k != 2 and k != 5:
        raise ValueError("tail must be 2 or 5")
    g1[0] = 1.0
    g1[1] = 1.0
    g1[2] = 2.0
    g1[3] = 1.0
    g1[4] = 2.0
    W_arr = np.zeros((B, 5, M), dtype=np.float64)
    rank_arr = np.zeros(B, dtype=np.int64)
    r_arr = np.zeros(B, dtype=np.float64)
    cdef double[:, :, ::1] W = W_arr
    cdef i64[::1] rk = rank_arr
    cdef double[::1] rr = r_arr
    cdef double* D = <double*>malloc(R * K * sizeof(double))
    cdef double* P = <double*>malloc(R * K * sizeof(double))
    cdef double* G = <double*>malloc(5 * K * sizeof(double))
    cdef double* gx = <double*>malloc(d * sizeof(double))
    cdef double* gy = <double*>malloc(d * sizeof(double))
    cdef double* work = <double*>malloc((2 * R * K + K * K + R * R + R + K + 8) * sizeof(double))
    try:
        with nogil:
            # scaled coordinates: the farthest neighbour sits at distance 1,
            # so ghosts, kernel and the derivative rows are the same for all b
            gr = 0.5
            eps = eps_factor / gr
            e2 = eps * eps
            e4 = e2 * e2
            for i in range(d):
                gx[i] = gr * cos(2.0 * M_PI * i / d)
                gy[i] = gr * sin(2.0 * M_PI * i / d)
            phi0 = exp(-e2 * gr * gr)
            for row in range(5):
                for j in range(K):
                    G[row * K + j] = 0.0
            for i in range(d):
                G[0 * K + i] = 2.0 * gx[i] * e2 * phi0
                G[1 * K + i] = 2.0 * gy[i] * e2 * phi0
                G[2 * K + i] = (-2.0 * e2 + 4.0 * gx[i] * gx[i] * e4) * phi0
                G[3 * K + i] = 4.0 * gx[i] * gy[i] * e4 * phi0
                G[4 * K + i] = (-2.0 * e2 + 4.0 * gy[i] * gy[i] * e4) * phi0
            for j in range(k):
                G[j * K + d + j] = g1[j]
            for b in range(B):
                s = _scale(proj, b, M)
                if s == 0.0:
                    rk[b] = 0
                    continue
                rr[b] = 0.5 * s
                for p in range(M):
                    w = c[b, p]
                    x = proj[b, p, 0] / s
                    y = proj[b, p, 1] / s
                    for i in range(d):
                        ex = x - gx[i]
                        ey = y - gy[i]
                        D[p * K + i] = w * (exp(-e2 * (ex * ex + ey * ey)) - phi0)
                    mono[0] = x
                    mono[1] = y
                    mono[2] = x * x
                    mono[3] = x * y
                    mono[4] = y * y
                    for j in range(k):
                        D[p * K + d + j] = w * mono[j]
                for i in range(d):
                    mono[0] = gx[i]
                    mono[1] = gy[i]
                    mono[2] = gx[i] * gx[i]
                    mono[3] = gx[i] * gy[i]
                    mono[4] = gy[i] * gy[i]
                    for j in range(k):
                        D[(M + j) * K + i] = mono[j]
                for j in range(k):
                    for i in range(k):
                        D[(M + j) * K + d + i] = 0.0
                rk[b] = _pinv(D, R, K, rcond, P, work)
                is1 = 1.0 / s
                is2 = is1 * is1
                for row in range(5):
                    for p in range(M):
                        acc = 0.0
                        for j in range(K):
                            acc += G[row * K + j] * P[j * R + p]
                        W[b, row, p] = acc * (is1 if row < 2 else is2) * c[b, p]
    finally:
        free(D)
        free(P)
        free(G)
        free(gx)
        free(gy)
        free(work)
    return W_arr, rank_arr, r_arr


# ---------------------------------------------------------------------------
# closest point on a quadratic graph
# ---------------------------------------------------------------------------

cdef inline double _h(const double* a, double x, double y) noexcept nogil:
    return a[0] + a[1] * x + a[2] * y + a[3] * x * x + a[4] * x * y + a[5] * y * y


cdef int _newton(const double* a, double px, double py, double pz,
                 double x, double y, double tol, int maxit,
                 double* xo, double* yo) noexcept nogil:
    cdef int it, ls
    cdef double h, hx, hy, r, gx, gy, hxx, hxy, hyy, det, sx, sy, f, fn, xn, yn, step
    cdef double g2, hxn, hyn
    for it in range(maxit):
        h = _h(a, x, y)
        hx = a[1] + 2.0 * a[3] * x + a[4] * y
        hy = a[2] + a[4] * x + 2.0 * a[5] * y
        r = h - pz
        gx = (x - px) + r * hx
        gy = (y - py) + r * hy
        if sqrt(gx * gx + gy * gy) <= tol:
            xo[0] = x
            yo[0] = y
            return 1
        hxx = 1.0 + hx * hx + r * 2.0 * a[3]
        hxy = hx * hy + r * a[4]
        hyy = 1.0 + hy * hy + r * 2.0 * a[5]
        det = hxx * hyy - hxy * hxy
        if det > 0.0 and hxx > 0.0:
            sx = -(hyy * gx - hxy * gy) / det
            sy = -(-hxy * gx + hxx * gy) / det
        else:
            sx = -gx
            sy = -gy
        f = 0.5 * ((x - px) * (x - px) + (y - py) * (y - py) + r * r)
        step = 1.0
        for ls in range(40):
            xn = x + step * sx
            yn = y + step * sy
            r = _h(a, xn, yn) - pz
            fn = 0.5 * ((xn - px) * (xn - px) + (yn - py) * (yn - py) + r * r)
            if fn < f:
                break
            if fn <= f * (1.0 + 1e-14):
                # objective flat to rounding: decide on the gradient instead
                hxn = a[1] + 2.0 * a[3] * xn + a[4] * yn
                hyn = a[2] + a[4] * xn + 2.0 * a[5] * yn
                g2 = ((xn - px) + r * hxn) ** 2 + ((yn - py) + r * hyn) ** 2
                if g2 < gx * gx + gy * gy:
                    break
            step *= 0.5
        else:
            # no decrease at machine precision: accept a near-stationary point
            xo[0] = x
            yo[0] = y
            return 1 if sqrt(gx * gx + gy * gy) <= 1e4 * tol else 0
        if xn == x and yn == y:
            xo[0] = x
            yo[0] = y
            return 1 if sqrt(gx * gx + gy * gy) <= 1e4 * tol else 0
        x = xn
        y = yn
    xo[0] = x
    yo[0] = y
    return 0


def closest_on_quadratic(const double[:, ::1] coef, const double[:, ::1] p,
                         double tol, int maxit):
    """Closest point of the graph z = h(x, y) to each local point p.

    Damped Newton on the squared distance, started at (p_x, p_y) and retried
    from the patch origin. Returns ``(xy, converged)``.
    """
    cdef Py_ssize_t B = coef.shape[0], b
    xy_arr = np.zeros((B, 2), dtype=np.float64)
    ok_arr = np.zeros(B, dtype=np.uint8)
    cdef double[:, ::1] xy = xy_arr
    cdef cnp.uint8_t[::1] ok = ok_arr
    cdef double xo, yo
    cdef int res
    with nogil:
        for b in range(B):
            res = _newton(&coef[b, 0], p[b, 0], p[b, 1], p[b, 2], p[b, 0], p[b, 1],
                          tol, maxit, &xo, &yo)
            if not res:
                res = _newton(&coef[b, 0], p[b, 0], p[b, 1], p[b, 2], 0.0, 0.0,
                              tol, maxit, &xo, &yo)
            xy[b, 0] = xo
            xy[b, 1] = yo
            ok[b] = res
    return xy_arr, ok_arr.astype(bool)
