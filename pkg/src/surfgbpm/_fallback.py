"""Pure numpy/scipy versions of the compiled kernels in ``_core.pyx``.

Signatures and return conventions match the compiled module exactly so the
two are interchangeable; results agree to rounding (neighbour lists agree
exactly).
"""

import numpy as np
from scipy.spatial import cKDTree

_G1 = np.array([1.0, 1.0, 2.0, 1.0, 2.0])


def pinv_batch(A, rcond):
    A = np.asarray(A, dtype=np.float64)
    B, m, n = A.shape
    if B == 0:
        return np.zeros((0, n, m)), np.zeros(0, dtype=np.int64)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    smax = s.max(axis=1, keepdims=True)
    keep = (s > rcond * smax) & (smax > 0)
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    P = np.einsum("bji,bj,bkj->bik", Vt, inv, U)
    return P, keep.sum(axis=1).astype(np.int64)


def knn(points, queries, k, origin, dx, shape, max_shells, exclude):
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    exclude = np.asarray(exclude, dtype=np.int64)
    Q = len(queries)
    idx = np.full((Q, k), -1, dtype=np.int64)
    dist = np.full((Q, k), np.inf)
    if len(points) == 0 or Q == 0:
        return idx, dist
    shape = np.asarray(shape)
    origin = np.asarray(origin)

    def cells(x):
        c = np.floor((x - origin) / dx + 0.5).astype(np.int64)
        return np.clip(c, 0, shape - 1)

    pc = cells(points)
    qc = cells(queries)
    tree = cKDTree(points)
    # every point within max_shells cells (Chebyshev, by bin) of the query bin
    # lies within this Euclidean radius of the query
    reach = (max_shells + 1) * dx * np.sqrt(3.0)
    extra = 4
    kq = min(k + 1 + extra, len(points))
    d, i = tree.query(queries, k=kq, distance_upper_bound=reach)
    d = np.atleast_2d(d).reshape(Q, kq)
    i = np.atleast_2d(i).reshape(Q, kq)
    valid = i < len(points)
    # rows whose kd-tree answer was truncated at kq hits
    full = valid.all(axis=1)
    i_safe = np.where(valid, i, 0)
    shell = np.abs(pc[i_safe] - qc[:, None, :]).max(axis=2)
    valid &= shell <= max_shells
    valid &= i != exclude[:, None]
    # exact distances in the same arithmetic as the compiled kernel
    diff = points[i_safe] - queries[:, None, :]
    # ordering uses squared distances, as the compiled kernel does
    d = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
    d = np.where(valid, d, np.inf)
    for q in range(Q):
        if valid[q].sum() < k and full[q]:
            # the kd-tree cut may have hidden in-shell points; take them all
            cand = np.array(tree.query_ball_point(queries[q], reach), dtype=np.int64)
            cand = cand[(np.abs(pc[cand] - qc[q]).max(axis=1) <= max_shells) & (cand != exclude[q])]
            e = points[cand] - queries[q]
            dq = e[:, 0] * e[:, 0] + e[:, 1] * e[:, 1] + e[:, 2] * e[:, 2]
            o = np.lexsort((cand, dq))[:k]
            idx[q, : len(o)] = cand[o]
            dist[q, : len(o)] = np.sqrt(dq[o])
            continue
        o = np.lexsort((i[q], d[q]))
        o = o[valid[q, o]][:k]
        idx[q, : len(o)] = i[q, o]
        dist[q, : len(o)] = np.sqrt(d[q, o])
    return idx, dist


def _scale(proj):
    return np.sqrt(proj[..., 0] ** 2 + proj[..., 1] ** 2).max(axis=1)


def poly_stencils(proj, c, rcond):
    proj = np.asarray(proj, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    B, M, _ = proj.shape
    s = _scale(proj)
    ok = s > 0
    ss = np.where(ok, s, 1.0)
    x = proj[..., 0] / ss[:, None]
    y = proj[..., 1] / ss[:, None]
    C = np.stack([x, y, x * x, x * y, y * y], axis=2) * c[..., None]
    P, rank = pinv_batch(C, rcond)
    unscale = np.stack([1 / ss, 1 / ss, 1 / ss**2, 1 / ss**2, 1 / ss**2], axis=1)
    W = _G1[None, :, None] * P * unscale[:, :, None] * c[:, None, :]
    W[~ok] = 0.0
    rank[~ok] = 0
    return W, rank


def quad_fits(proj, c, rcond):
    proj = np.asarray(proj, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    B, M, _ = proj.shape
    s = _scale(proj)
    ok = s > 0
    ss = np.where(ok, s, 1.0)
    x = proj[..., 0] / ss[:, None]
    y = proj[..., 1] / ss[:, None]
    rows = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=2) * c[..., None]
    base = np.zeros((B, 1, 6))
    base[:, 0, 0] = 1.0
    C = np.concatenate([base, rows], axis=1)
    rhs = np.concatenate([np.zeros((B, 1)), c * proj[..., 2]], axis=1)
    P, rank = pinv_batch(C, rcond)
    coef = np.einsum("bjp,bp->bj", P, rhs)
    coef[:, 1:3] /= ss[:, None]
    coef[:, 3:] /= ss[:, None] ** 2
    coef[~ok] = 0.0
    rank[~ok] = 0
    return coef, rank


def rbf_stencils(proj, c, n_ghost, eps_factor, rcond, tail=5):
    proj = np.asarray(proj, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if tail not in (2, 5):
        raise ValueError("tail must be 2 or 5")
    B, M, _ = proj.shape
    d, k = n_ghost, tail
    s = _scale(proj)
    ok = s > 0
    ss = np.where(ok, s, 1.0)
    x = proj[..., 0] / ss[:, None]
    y = proj[..., 1] / ss[:, None]
    gr = 0.5
    eps = eps_factor / gr
    e2, e4 = eps**2, eps**4
    ang = 2.0 * np.pi * np.arange(d) / d
    gx, gy = gr * np.cos(ang), gr * np.sin(ang)
    phi0 = np.exp(-e2 * gr * gr)
    r2 = (x[..., None] - gx) ** 2 + (y[..., None] - gy) ** 2
    mono = np.stack([x, y, x * x, x * y, y * y], axis=2)[..., :k]
    top = np.concatenate([np.exp(-e2 * r2) - phi0, mono], axis=2) * c[..., None]
    bottom = np.zeros((k, d + k))
    bottom[:, :d] = np.stack([gx, gy, gx * gx, gx * gy, gy * gy])[:k]
    D = np.concatenate([top, np.broadcast_to(bottom, (B, k, d + k))], axis=1)
    G = np.zeros((5, d + k))
    G[0, :d] = 2 * gx * e2 * phi0
    G[1, :d] = 2 * gy * e2 * phi0
    G[2, :d] = (-2 * e2 + 4 * gx**2 * e4) * phi0
    G[3, :d] = 4 * gx * gy * e4 * phi0
    G[4, :d] = (-2 * e2 + 4 * gy**2 * e4) * phi0
    G[np.arange(k), d + np.arange(k)] = _G1[:k]
    P, rank = pinv_batch(np.ascontiguousarray(D), rcond)
    W = np.einsum("rj,bjp->brp", G, P[:, :, :M])
    unscale = np.stack([1 / ss, 1 / ss, 1 / ss**2, 1 / ss**2, 1 / ss**2], axis=1)
    W = W * unscale[:, :, None] * c[:, None, :]
    W[~ok] = 0.0
    rank[~ok] = 0
    return W, rank, np.where(ok, 0.5 * s, 0.0)


def _h(a, x, y):
    return a[:, 0] + a[:, 1] * x + a[:, 2] * y + a[:, 3] * x * x + a[:, 4] * x * y + a[:, 5] * y * y


def _newton(a, p, x, y, tol, maxit):
    B = len(a)
    done = np.zeros(B, dtype=bool)
    ok = np.zeros(B, dtype=bool)
    px, py, pz = p[:, 0], p[:, 1], p[:, 2]
    for _ in range(maxit):
        act = ~done
        if not act.any():
            break
        h = _h(a, x, y)
        hx = a[:, 1] + 2 * a[:, 3] * x + a[:, 4] * y
        hy = a[:, 2] + a[:, 4] * x + 2 * a[:, 5] * y
        r = h - pz
        gx = (x - px) + r * hx
        gy = (y - py) + r * hy
        gn = np.hypot(gx, gy)
        conv = act & (gn <= tol)
        ok |= conv
        done |= conv
        act = ~done
        hxx = 1 + hx * hx + r * 2 * a[:, 3]
        hxy = hx * hy + r * a[:, 4]
        hyy = 1 + hy * hy + r * 2 * a[:, 5]
        det = hxx * hyy - hxy * hxy
        newton = (det > 0) & (hxx > 0)
        sdet = np.where(newton, det, 1.0)
        sx = np.where(newton, -(hyy * gx - hxy * gy) / sdet, -gx)
        sy = np.where(newton, -(-hxy * gx + hxx * gy) / sdet, -gy)
        f = 0.5 * ((x - px) ** 2 + (y - py) ** 2 + r * r)
        step = np.ones(B)
        accepted = np.zeros(B, dtype=bool)
        xn, yn = x.copy(), y.copy()
        for _ in range(40):
            need = act & ~accepted
            if not need.any():
                break
            cx = x + step * sx
            cy = y + step * sy
            rn = _h(a, cx, cy) - pz
            fn = 0.5 * ((cx - px) ** 2 + (cy - py) ** 2 + rn * rn)
            hxn = a[:, 1] + 2 * a[:, 3] * cx + a[:, 4] * cy
            hyn = a[:, 2] + a[:, 4] * cx + 2 * a[:, 5] * cy
            gn2 = np.hypot((cx - px) + rn * hxn, (cy - py) + rn * hyn)
            # objective flat to rounding: decide on the gradient instead
            flat = (fn <= f * (1 + 1e-14)) & (gn2 < gn)
            good = need & ((fn < f) | flat)
            xn = np.where(good, cx, xn)
            yn = np.where(good, cy, yn)
            accepted |= good
            step = np.where(need & ~good, step * 0.5, step)
        stalled = act & (~accepted | ((xn == x) & (yn == y)))
        ok |= stalled & (gn <= 1e4 * tol)
        done |= stalled
        upd = act & ~stalled
        x = np.where(upd, xn, x)
        y = np.where(upd, yn, y)
    return x, y, ok


def closest_on_quadratic(coef, p, tol, maxit):
    coef = np.asarray(coef, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    x, y, ok = _newton(coef, p, p[:, 0].copy(), p[:, 1].copy(), tol, maxit)
    if not ok.all():
        bad = ~ok
        x2, y2, ok2 = _newton(coef[bad], p[bad], np.zeros(bad.sum()), np.zeros(bad.sum()), tol, maxit)
        x[bad], y[bad], ok[bad] = x2, y2, ok2
    return np.stack([x, y], axis=1), ok
