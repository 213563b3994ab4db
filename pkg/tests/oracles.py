"""Independent test oracles, built without reusing package internals.

* exact polytope projection by exhaustive active-set enumeration,
* vertex enumeration of small polytopes,
* a raw (unscaled) constraint system assembled from scratch.
"""
import itertools

import numpy as np


def constraint_system(mu, nu):
    """Stacked equality constraints (row sums, column sums, raw row means)."""
    l, m = len(mu), len(nu)
    x, y = mu.atoms, nu.atoms
    rows, rhs = [], []
    for i in range(l):
        r = np.zeros((l, m))
        r[i] = 1.0
        rows.append(r.ravel())
        rhs.append(mu.weights[i])
    for j in range(m):
        r = np.zeros((l, m))
        r[:, j] = 1.0
        rows.append(r.ravel())
        rhs.append(nu.weights[j])
    for i in range(l):
        r = np.zeros((l, m))
        r[i] = y - x[i]
        rows.append(r.ravel())
        rhs.append(0.0)
    return np.array(rows), np.array(rhs)


def _affine_ls_point(C, d, p):
    """Projection of p onto {x : Cx = d}; returns None when inconsistent."""
    u, s, vt = np.linalg.svd(C, full_matrices=False)
    rank = int((s > s[0] * 1e-12).sum())
    u, s, vt = u[:, :rank], s[:rank], vt[:rank]
    resid = C @ p - d
    xcand = p - vt.T @ ((u.T @ resid) / s)
    if np.abs(C @ xcand - d).max() > 1e-9:
        return None
    return xcand


def qp_projection_enum(p, A, b):
    """Exact Euclidean projection onto {Ax = b, x >= 0} by active-set enumeration.

    The optimal active set's equality-constrained projection coincides
    with the true projection (its first-order conditions match), so
    enumerating every pin set, filtering by feasibility, and taking the
    closest candidate is exact.  Exponential in the dimension: test use
    only.
    """
    p = np.asarray(p, dtype=float).ravel()
    n = p.size
    best, best_dist = None, np.inf
    for r in range(n + 1):
        for pins in itertools.combinations(range(n), r):
            extra = np.zeros((len(pins), n))
            for k, idx in enumerate(pins):
                extra[k, idx] = 1.0
            C = np.vstack([A, extra]) if pins else A
            d = np.concatenate([b, np.zeros(len(pins))]) if pins else b
            x = _affine_ls_point(C, d, p)
            if x is None or x.min() < -1e-10:
                continue
            dist = np.linalg.norm(x - p)
            if dist < best_dist - 1e-14:
                best_dist, best = dist, x
    if best is None:
        raise RuntimeError("empty polytope in enumeration oracle")
    return best


def enumerate_vertices(A, b, n):
    """All vertices of {Ax = b, x >= 0} by pinning coordinate subsets."""
    u, s, _ = np.linalg.svd(A)
    rank = int((s > s[0] * 1e-12).sum())
    free_dim = n - rank
    vertices = []
    for pins in itertools.combinations(range(n), free_dim):
        extra = np.zeros((len(pins), n))
        for k, idx in enumerate(pins):
            extra[k, idx] = 1.0
        C = np.vstack([A, extra]) if pins else A
        d = np.concatenate([b, np.zeros(len(pins))]) if pins else b
        x = _affine_ls_point(C, d, np.zeros(n))
        if x is None or x.min() < -1e-10:
            continue
        if not any(np.linalg.norm(x - v) < 1e-9 for v in vertices):
            vertices.append(np.maximum(x, 0.0))
    return vertices
