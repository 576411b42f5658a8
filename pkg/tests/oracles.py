"""Independent reference computations used by the test-suite."""

import itertools

import numpy as np


def active_set_qp(P, q, G, g, tol=1e-9):
    """Brute-force minimizer of 1/2 z'Pz + q'z s.t. Gz <= g (P positive definite).

    Every subset of rows is tried as the active set; the equality-constrained
    KKT system is solved and the best primal/dual feasible candidate is kept.
    """
    n, m = q.size, g.size
    best = None
    for k in range(0, min(n, m) + 1):
        for act in itertools.combinations(range(m), k):
            act = list(act)
            Ga = G[act]
            K = np.block([[P, Ga.T], [Ga, np.zeros((k, k))]])
            rhs = np.concatenate([-q, g[act]])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:n], sol[n:]
            if np.any(G @ z > g + tol) or np.any(lam < -tol):
                continue
            val = 0.5 * z @ P @ z + q @ z
            if best is None or val < best[0]:
                best = (val, z)
    return best


def random_qp(rng, n=None, m=None):
    """Strictly convex QP data (P, q, G, g) with a strictly feasible point, n <= 6, m <= 10."""
    n = n or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 11))
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.1 * np.eye(n)
    q = rng.normal(size=n) * 3
    G = rng.normal(size=(m, n))
    z0 = rng.normal(size=n)
    g = G @ z0 + rng.uniform(0.0, 1.0, size=m)
    return P, q, G, g


def input_exists(A, B, H, b, U_lo, U_hi, x, margin=0.0):
    """Whether some u in the box [U_lo, U_hi] gives H(Ax + Bu) <= b - margin (plain scipy LP)."""
    from scipy.optimize import linprog

    A, B, H = np.atleast_2d(A), np.atleast_2d(B), np.atleast_2d(H)
    rhs = np.asarray(b, dtype=float) - margin - H @ A @ x
    res = linprog(np.zeros(B.shape[1]), A_ub=H @ B, b_ub=rhs,
                  bounds=list(zip(np.ravel(U_lo), np.ravel(U_hi))), method="highs")
    return res.status == 0


def expm_taylor(M, terms=30):
    """Matrix exponential by scaling and squaring of a truncated Taylor series."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    norm = np.linalg.norm(M, 1)
    k = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    S = M / 2.0**k
    term = np.eye(M.shape[0])
    out = term.copy()
    for j in range(1, terms):
        term = term @ S / j
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


def grid_argmin_1d(cost, feasible, lo, hi, step=1e-4):
    """Dense grid search for a scalar decision variable."""
    grid = np.arange(lo, hi + step / 2, step)
    ok = np.array([feasible(u) for u in grid])
    vals = np.where(ok, [cost(u) for u in grid], np.inf)
    return float(grid[int(np.argmin(vals))])


def polygon_vertices(H, b, tol=1e-9):
    """All vertices of a bounded 2-D polygon {Hx <= b} by pairwise row intersection."""
    H, b = np.atleast_2d(H), np.asarray(b, dtype=float)
    pts = []
    for i, j in itertools.combinations(range(len(b)), 2):
        M = H[[i, j]]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        p = np.linalg.solve(M, b[[i, j]])
        if np.all(H @ p <= b + tol):
            pts.append(p)
    pts = np.array(pts)
    keep = []
    for p in pts:
        if not any(np.allclose(p, q, atol=1e-9) for q in keep):
            keep.append(p)
    return np.array(keep)


def random_polytope(rng, n, rows, lo=0.5, hi=1.5):
    """Random bounded H-polytope with the origin inside: box rows plus random cuts."""
    D = rng.normal(size=(rows, n))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    H = np.vstack([np.eye(n), -np.eye(n), D])
    b = np.concatenate([np.full(2 * n, hi), rng.uniform(lo, hi, rows)])
    return H, b
