"""Convex set representations and polytope calculus.

Four representations are supported: half-space polytopes (:class:`HPolytope`),
vertex polytopes with the origin pinned as vertex 0 (:class:`VPolytope`),
zonotopes (:class:`Zonotope`) and axis-aligned boxes (:class:`Box`). All set
objects are immutable; every operation returns a new set.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from .errors import ConfigurationError, EmptySetError, ResourceError
from .solver import Status, linprog_highs

log = logging.getLogger(__name__)

REDUNDANCY_TOL = 1e-9
VERTEX_CACHE_MAX_DIM = 5


def _vec(x, n=None) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if n is not None and x.size != n:
        raise ConfigurationError(f"expected a vector of length {n}, got {x.size}")
    return x


class ConvexSet:
    """Common interface of all set representations."""

    rep: str = ""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def contains(self, x, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def support(self, d) -> float:
        raise NotImplementedError

    def scale(self, gamma: float) -> "ConvexSet":
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def supports(self, directions) -> np.ndarray:
        return np.array([self.support(d) for d in np.atleast_2d(directions)])

    def bounding_box(self) -> "Box":
        eye = np.eye(self.dim)
        hi = self.supports(eye)
        lo = -self.supports(-eye)
        return Box(lo, hi)


@dataclass(frozen=True, eq=False)
class HPolytope(ConvexSet):
    """Polyhedron ``{x | Hx <= b}``.

    With ``origin_form`` set, ``b`` is all ones and the origin lies strictly
    inside, so that scaling by gamma is a pure right-hand-side scaling.
    """

    H: np.ndarray
    b: np.ndarray
    origin_form: bool = False

    rep = "hpoly"

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if H.ndim == 1:
            H = H.reshape(b.size, -1) if b.size else H.reshape(0, H.size)
        if H.ndim != 2 or H.shape[0] != b.size:
            raise ConfigurationError(f"H has shape {H.shape} but b has {b.size} entries")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(b))):
            raise ConfigurationError("polytope data must be finite")
        if self.origin_form and not np.allclose(b, 1.0):
            raise ConfigurationError("origin-form polytopes need b = 1")
        H.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_box(cls, lo, hi) -> "HPolytope":
        lo, hi = _vec(lo), _vec(hi)
        n = lo.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = _vec(x, self.dim)
        if self.n_rows == 0:
            return True
        return bool(np.max(self.H @ x - self.b) <= tol)

    def support(self, d) -> float:
        d = _vec(d, self.dim)
        sol = linprog_highs(-d, self.H, np.full(self.n_rows, -np.inf), self.b)
        if sol.status is Status.OPTIMAL:
            return -sol.objective
        if sol.status is Status.INFEASIBLE:
            return -np.inf
        raise ConfigurationError("support function is unbounded; the polytope is not bounded")

    def supports(self, directions) -> np.ndarray:
        D = np.atleast_2d(directions)
        V = self._vertex_cache
        if V is not None:
            return np.max(D @ V.T, axis=1)
        return np.array([self.support(d) for d in D])

    @cached_property
    def _vertex_cache(self) -> np.ndarray | None:
        # supports from vertices are exact and far cheaper than one LP per direction
        if not 1 <= self.dim <= VERTEX_CACHE_MAX_DIM or self.n_rows == 0:
            return None
        try:
            if not self.is_bounded():
                return None
            return self.vertices()
        except (EmptySetError, QhullError, ValueError):
            return None

    def scale(self, gamma: float) -> "HPolytope":
        gamma = _check_gamma(gamma)
        if gamma == 1.0:
            return self
        return HPolytope(self.H, gamma * self.b)

    def intersect(self, other: "HPolytope | Box") -> "HPolytope":
        other = as_hpolytope(other)
        if other.dim != self.dim:
            raise ConfigurationError("dimension mismatch in intersection")
        return HPolytope(np.vstack([self.H, other.H]), np.concatenate([self.b, other.b]))

    def chebyshev_ball(self) -> tuple[np.ndarray, float]:
        """Center and radius of the largest inscribed Euclidean ball."""
        n = self.dim
        norms = np.linalg.norm(self.H, axis=1)
        A = np.hstack([self.H, norms[:, None]])
        # bound the radius so unbounded sets still give a finite answer
        A = np.vstack([A, np.r_[np.zeros(n), 1.0]])
        hi = np.concatenate([self.b, [1e6]])
        sol = linprog_highs(np.r_[np.zeros(n), -1.0], A, np.full(hi.size, -np.inf), hi)
        if sol.status is not Status.OPTIMAL:
            return np.full(n, np.nan), -np.inf
        return sol.z[:n], float(sol.z[n])

    def is_empty(self, tol: float = 0.0) -> bool:
        _, r = self.chebyshev_ball()
        if r > tol:
            return False
        sol = linprog_highs(np.zeros(self.dim), self.H, np.full(self.n_rows, -np.inf), self.b + 1e-12)
        return sol.status is not Status.OPTIMAL

    def is_bounded(self) -> bool:
        eye = np.eye(self.dim)
        for d in np.vstack([eye, -eye]):
            sol = linprog_highs(-d, self.H, np.full(self.n_rows, -np.inf), self.b)
            if sol.status is not Status.OPTIMAL:
                return sol.status is Status.INFEASIBLE
        return True

    def to_origin_form(self, margin: float = 1e-9) -> "HPolytope":
        """Rescale rows to ``{x | Hx <= 1}``; rejects sets without the origin strictly inside."""
        if self.origin_form:
            return self
        if self.n_rows and np.min(self.b) <= margin:
            raise EmptySetError(
                "the origin is not strictly inside the polytope (min b = %.3g)" % np.min(self.b)
            )
        return HPolytope(self.H / self.b[:, None], np.ones(self.n_rows), origin_form=True)

    def vertices(self) -> np.ndarray:
        """Vertex enumeration (qhull); intended for low dimensions."""
        center, r = self.chebyshev_ball()
        if not r > 1e-12:
            raise EmptySetError("vertex enumeration needs a full-dimensional polytope")
        if self.dim == 1:
            h = self.H[:, 0]
            up = np.min(self.b[h > 0] / h[h > 0])
            dn = np.max(self.b[h < 0] / h[h < 0])
            return np.array([[dn], [up]])
        hs = HalfspaceIntersection(np.hstack([self.H, -self.b[:, None]]), center)
        pts = hs.intersections
        return _unique_rows(pts, 1e-9)

    def to_dict(self) -> dict:
        return {"rep": self.rep, "H": self.H.tolist(), "b": self.b.tolist(), "origin_form": self.origin_form}


@dataclass(frozen=True, eq=False)
class VPolytope(ConvexSet):
    """Convex hull of ``vertices``; row 0 is pinned to the origin."""

    vertices: np.ndarray

    rep = "vpoly"

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        if V.ndim != 2 or V.shape[0] < 1:
            raise ConfigurationError("vertices must be a non-empty 2-D array")
        if np.any(V[0] != 0.0):
            raise ConfigurationError("vertex 0 of a V-polytope must be the origin")
        V.setflags(write=False)
        object.__setattr__(self, "vertices", V)

    @classmethod
    def from_points(cls, points) -> "VPolytope":
        """Build a V-polytope from arbitrary points, prepending the origin."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        P = P[np.any(P != 0.0, axis=1)]
        return cls(np.vstack([np.zeros(P.shape[1]), P]))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = _vec(x, self.dim)
        V = self.vertices
        k, n = V.shape
        # min t s.t. |V'l - x| <= t, sum l = 1, l >= 0
        A = np.block([
            [V.T, -np.ones((n, 1))],
            [V.T, np.ones((n, 1))],
            [np.ones((1, k)), np.zeros((1, 1))],
            [np.eye(k), np.zeros((k, 1))],
        ])
        lo = np.concatenate([np.full(n, -np.inf), x, [1.0], np.zeros(k)])
        hi = np.concatenate([x, np.full(n, np.inf), [1.0], np.full(k, np.inf)])
        sol = linprog_highs(np.r_[np.zeros(k), 1.0], A, lo, hi)
        return bool(sol.status is Status.OPTIMAL and sol.objective <= tol)

    def support(self, d) -> float:
        return float(np.max(self.vertices @ _vec(d, self.dim)))

    def supports(self, directions) -> np.ndarray:
        return np.max(np.atleast_2d(directions) @ self.vertices.T, axis=1)

    def scale(self, gamma: float) -> "VPolytope":
        return VPolytope(_check_gamma(gamma) * self.vertices)

    def to_dict(self) -> dict:
        return {"rep": self.rep, "vertices": self.vertices.tolist()}


@dataclass(frozen=True, eq=False)
class Zonotope(ConvexSet):
    """``{c + G l | ||l||_inf <= 1}``."""

    c: np.ndarray
    G: np.ndarray

    rep = "zonotope"

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        G = np.array(self.G, dtype=float)
        if G.ndim == 1:
            G = G.reshape(c.size, -1)
        if G.ndim != 2 or G.shape[0] != c.size or G.shape[1] < 1:
            raise ConfigurationError("generator matrix must be n x N_g with N_g >= 1")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(G))):
            raise ConfigurationError("zonotope data must be finite")
        c.setflags(write=False)
        G.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "G", G)

    @property
    def dim(self) -> int:
        return self.c.size

    @property
    def n_generators(self) -> int:
        return self.G.shape[1]

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = _vec(x, self.dim)
        n, g = self.G.shape
        # min t s.t. G l = x - c, -t <= l <= t
        A = np.block([
            [self.G, np.zeros((n, 1))],
            [np.eye(g), -np.ones((g, 1))],
            [np.eye(g), np.ones((g, 1))],
        ])
        r = x - self.c
        lo = np.concatenate([r, np.full(g, -np.inf), np.zeros(g)])
        hi = np.concatenate([r, np.zeros(g), np.full(g, np.inf)])
        sol = linprog_highs(np.r_[np.zeros(g), 1.0], A, lo, hi)
        return bool(sol.status is Status.OPTIMAL and sol.objective <= 1.0 + tol)

    def support(self, d) -> float:
        d = _vec(d, self.dim)
        return float(self.c @ d + np.sum(np.abs(self.G.T @ d)))

    def supports(self, directions) -> np.ndarray:
        D = np.atleast_2d(directions)
        return D @ self.c + np.sum(np.abs(D @ self.G), axis=1)

    def scale(self, gamma: float) -> "Zonotope":
        gamma = _check_gamma(gamma)
        return Zonotope(gamma * self.c, gamma * self.G)

    def vertices(self, max_patterns: int = 1 << 16) -> np.ndarray:
        """Extreme points via sign patterns (convex hull of all corners)."""
        g = self.n_generators
        if 2 ** g > max_patterns:
            raise ResourceError(f"zonotope has too many generators ({g}) for corner enumeration")
        signs = np.array(list(itertools.product([-1.0, 1.0], repeat=g)))
        pts = self.c + signs @ self.G.T
        return _hull_points(pts)

    def to_dict(self) -> dict:
        return {"rep": self.rep, "c": self.c.tolist(), "G": self.G.tolist()}


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    """Axis-aligned box ``{x | lo <= x <= hi}``."""

    lo: np.ndarray
    hi: np.ndarray

    rep = "box"

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.size != hi.size:
            raise ConfigurationError("box bounds must have equal length")
        if np.any(lo > hi):
            raise ConfigurationError("box lower bound exceeds upper bound")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigurationError("box bounds must be finite")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, radius, n: int | None = None) -> "Box":
        r = np.asarray(radius, dtype=float)
        if r.ndim == 0:
            r = np.full(n, float(r))
        return cls(-r, r)

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = _vec(x, self.dim)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def support(self, d) -> float:
        d = _vec(d, self.dim)
        return float(np.sum(np.where(d >= 0, d * self.hi, d * self.lo)))

    def supports(self, directions) -> np.ndarray:
        D = np.atleast_2d(directions)
        return np.sum(np.where(D >= 0, D * self.hi, D * self.lo), axis=1)

    def scale(self, gamma: float) -> "Box":
        gamma = _check_gamma(gamma)
        return Box(gamma * self.lo, gamma * self.hi)

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lo, self.hi))))

    def to_hpolytope(self) -> HPolytope:
        return HPolytope.from_box(self.lo, self.hi)

    def to_dict(self) -> dict:
        return {"rep": self.rep, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


# ---------------------------------------------------------------------------
# module-level operations


def _check_gamma(gamma) -> float:
    gamma = float(gamma)
    if not gamma >= 0.0:
        raise ConfigurationError(f"scaling factor must be nonnegative, got {gamma}")
    return gamma


def _unique_rows(P: np.ndarray, tol: float) -> np.ndarray:
    if P.shape[0] == 0:
        return P
    keys = np.round(P / tol).astype(np.int64)
    _, idx = np.unique(keys, axis=0, return_index=True)
    return P[np.sort(idx)]


def _hull_points(pts: np.ndarray) -> np.ndarray:
    pts = _unique_rows(pts, 1e-12)
    if pts.shape[1] == 1:
        return np.array([[pts.min()], [pts.max()]])
    try:
        return pts[ConvexHull(pts).vertices]
    except QhullError:
        return pts


def as_hpolytope(s: ConvexSet) -> HPolytope:
    if isinstance(s, HPolytope):
        return s
    if isinstance(s, Box):
        return s.to_hpolytope()
    raise ConfigurationError(f"expected an H-polytope or box, got {type(s).__name__}")


def contains(s: ConvexSet, x, tol: float = 1e-9) -> bool:
    return s.contains(x, tol)


def scale(s: ConvexSet, gamma: float) -> ConvexSet:
    return s.scale(gamma)


def support(s: ConvexSet, d) -> float:
    return s.support(d)


def minkowski_support(sets, d) -> float:
    """Support function of a Minkowski sum, as the sum of supports."""
    return float(sum(s.support(d) for s in sets))


def pontryagin_diff(a: HPolytope | Box, w: ConvexSet) -> HPolytope:
    """``a ⊖ w`` by per-row support-function offsets."""
    a = as_hpolytope(a)
    if w.dim != a.dim:
        raise ConfigurationError("dimension mismatch in Pontryagin difference")
    offsets = w.supports(a.H) if a.n_rows else np.zeros(0)
    if not np.all(np.isfinite(offsets)):
        raise ConfigurationError("subtracted set has unbounded support")
    out = HPolytope(a.H, a.b - offsets)
    if out.n_rows and out.is_empty():
        log.warning("Pontryagin difference is empty")
    return out


def _normalize_rows(A: np.ndarray, d: np.ndarray, tol=1e-12):
    norms = np.linalg.norm(A, axis=1)
    zero = norms <= tol
    if np.any(zero & (d < -1e-10)):
        raise EmptySetError("constraint system is infeasible (0 <= negative)")
    keep = ~zero
    A, d, norms = A[keep], d[keep], norms[keep]
    A = A / norms[:, None]
    d = d / norms
    # keep the tightest of (nearly) parallel duplicates
    keys = np.round(A * 1e9).astype(np.int64)
    order = np.lexsort(np.vstack([d, keys.T[::-1]]))
    A, d, keys = A[order], d[order], keys[order]
    first = np.ones(len(d), dtype=bool)
    if len(d) > 1:
        first[1:] = np.any(keys[1:] != keys[:-1], axis=1)
    return A[first], d[first]


def remove_redundant(p: HPolytope, method: str = "auto") -> HPolytope:
    """Drop rows implied by the others.

    Rows are normalized and deduplicated first. For full-dimensional sets of
    dimension >= 2 the irredundant rows are read off a convex hull of the polar
    points; the LP test (``method="lp"``) removes one row at a time, keeping a
    row unless maximizing it over the remaining rows stays within 1e-9.
    """
    if p.n_rows == 0:
        return p
    H, b = _normalize_rows(np.asarray(p.H), np.asarray(p.b))
    n = p.dim
    if H.shape[0] == 0:
        return HPolytope(np.zeros((0, n)), np.zeros(0))
    cand = HPolytope(H, b)
    center, r = cand.chebyshev_ball()
    if not np.isfinite(r) or r < 0:
        raise EmptySetError("cannot remove redundancy from an empty set")
    if n == 1:
        h = H[:, 0]
        rows = []
        for sgn in (1.0, -1.0):
            idx = np.flatnonzero(h * sgn > 0)
            if idx.size:
                rows.append(idx[np.argmin(b[idx] / np.abs(h[idx]))])
        return HPolytope(H[rows], b[rows])
    if method in ("auto", "qhull") and r > 1e-7:
        keep = _irredundant_qhull(H, b, center)
        if keep is not None:
            return HPolytope(H[keep], b[keep])
        if method == "qhull":
            raise ConfigurationError("qhull redundancy removal failed")
    return _remove_redundant_lp(H, b)


def _irredundant_qhull(H, b, center):
    slack = b - H @ center
    pts = H / slack[:, None]
    # the origin joins the point cloud so unbounded polyhedra are handled too
    cloud = np.vstack([np.zeros(H.shape[1]), pts])
    hull = None
    for opts in (None, "Qt Q12"):
        try:
            hull = ConvexHull(cloud, qhull_options=opts)
            break
        except (QhullError, ValueError):
            continue
    if hull is None:
        return None
    verts = hull.vertices
    keep = np.sort(verts[verts > 0] - 1)
    return keep


def _remove_redundant_lp(H, b):
    m = H.shape[0]
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        keep[i] = False
        idx = np.flatnonzero(keep)
        A = np.vstack([H[idx], H[i]])
        hi = np.concatenate([b[idx], [b[i] + 1.0]])
        sol = linprog_highs(-H[i], A, np.full(hi.size, -np.inf), hi)
        if not (sol.status is Status.OPTIMAL and -sol.objective <= b[i] + REDUNDANCY_TOL):
            keep[i] = True
    return HPolytope(H[keep], b[keep])


def _fm_eliminate(A: np.ndarray, d: np.ndarray, j: int, tol: float = 1e-12):
    col = A[:, j]
    pos = np.flatnonzero(col > tol)
    neg = np.flatnonzero(col < -tol)
    zer = np.flatnonzero(np.abs(col) <= tol)
    Ap = A[pos] / col[pos, None]
    dp = d[pos] / col[pos]
    An = A[neg] / -col[neg, None]
    dn = d[neg] / -col[neg]
    comb = (Ap[:, None, :] + An[None, :, :]).reshape(-1, A.shape[1])
    dcomb = (dp[:, None] + dn[None, :]).reshape(-1)
    A2 = np.vstack([A[zer], comb])
    d2 = np.concatenate([d[zer], dcomb])
    return np.delete(A2, j, axis=1), d2


def project(A: np.ndarray, d: np.ndarray, keep_dims: int, max_rows: int = 50000) -> HPolytope:
    """Project ``{(x, u) | A [x; u] <= d}`` onto its first ``keep_dims`` coordinates.

    Fourier–Motzkin elimination, eliminating the column that creates the
    fewest rows first and pruning redundant rows after every step.
    """
    A = np.asarray(A, dtype=float)
    d = np.asarray(d, dtype=float)
    A, d = _normalize_rows(A, d)
    while A.shape[1] > keep_dims:
        cols = range(keep_dims, A.shape[1])
        counts = []
        for j in cols:
            c = A[:, j]
            npos, nneg = np.sum(c > 1e-12), np.sum(c < -1e-12)
            counts.append(npos * nneg + (len(c) - npos - nneg))
        j = keep_dims + int(np.argmin(counts))
        if min(counts) > max_rows:
            raise ResourceError(
                f"Fourier-Motzkin step would create {min(counts)} rows (cap {max_rows})"
            )
        A, d = _fm_eliminate(A, d, j)
        A, d = _normalize_rows(A, d) if A.shape[0] else (A, d)
        if A.shape[0] and A.shape[1] > 0:
            red = remove_redundant(HPolytope(A, d))
            A, d = np.asarray(red.H), np.asarray(red.b)
    return HPolytope(A.reshape(-1, keep_dims), d)


def affine_preimage(
    omega: HPolytope | Box,
    A,
    B,
    u_set: HPolytope | Box,
    target_tightening: ConvexSet | None = None,
    max_rows: int = 50000,
    x_set: HPolytope | Box | None = None,
) -> HPolytope:
    """``{x | exists u in U: A x + B u in omega ⊖ W}`` by Fourier–Motzkin projection.

    ``x_set`` rows are added before projecting (the result is then intersected
    with it); this keeps intermediate polyhedra bounded.
    """
    omega = as_hpolytope(omega)
    u_set = as_hpolytope(u_set)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, nu = A.shape[1], B.shape[1]
    if omega.dim != A.shape[0] or u_set.dim != nu:
        raise ConfigurationError("dimension mismatch in affine pre-image")
    b = omega.b
    if target_tightening is not None:
        b = pontryagin_diff(omega, target_tightening).b
    M = np.block([[omega.H @ A, omega.H @ B], [np.zeros((u_set.n_rows, n)), u_set.H]])
    d = np.concatenate([b, u_set.b])
    if x_set is not None:
        xs = as_hpolytope(x_set)
        M = np.vstack([M, np.hstack([xs.H, np.zeros((xs.n_rows, nu))])])
        d = np.concatenate([d, xs.b])
    return project(M, d, n, max_rows=max_rows)


def intersect(*sets) -> HPolytope:
    hs = [as_hpolytope(s) for s in sets]
    return HPolytope(np.vstack([h.H for h in hs]), np.concatenate([h.b for h in hs]))


def unit_directions(n: int, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(count, n))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    eye = np.eye(n)
    return np.vstack([eye, -eye, D])


def set_distance(a: ConvexSet, b: ConvexSet, directions: int = 100, seed: int = 0, extra=None) -> float:
    """Largest support-function gap over sampled directions.

    Directions have unit 1-norm, so for exhaustive sampling this is the
    Hausdorff distance measured in the infinity norm.
    """
    if a.dim != b.dim:
        raise ConfigurationError("dimension mismatch in set distance")
    D = unit_directions(a.dim, directions, seed)
    if extra is not None and len(extra):
        D = np.vstack([D, np.atleast_2d(extra)])
    D = D / np.sum(np.abs(D), axis=1, keepdims=True)
    return float(np.max(np.abs(a.supports(D) - b.supports(D))))


def is_subset(a: ConvexSet, b: HPolytope | Box, tol: float = 1e-9) -> bool:
    """``a ⊆ b`` for H-polytope/box ``b``, checked row by row with support functions."""
    b = as_hpolytope(b)
    if b.n_rows == 0:
        return True
    return bool(np.all(a.supports(b.H) <= b.b + tol))


def inscribed_radius(s: ConvexSet) -> float:
    """Radius of the largest origin-centred Euclidean ball inside ``s``."""
    if isinstance(s, (HPolytope, Box)):
        h = as_hpolytope(s)
        return float(np.min(h.b / np.linalg.norm(h.H, axis=1)))
    return float(np.min(facet_offsets(s)))


def facet_offsets(s: ConvexSet) -> np.ndarray:
    pts = s.vertices() if not isinstance(s, VPolytope) else s.vertices
    hull = ConvexHull(pts)
    eq = hull.equations
    return -eq[:, -1] / np.linalg.norm(eq[:, :-1], axis=1)


def to_hpolytope(s: ConvexSet) -> HPolytope:
    """H-representation of any bounded full-dimensional set (via its vertices)."""
    if isinstance(s, (HPolytope, Box)):
        return as_hpolytope(s)
    pts = s.vertices() if isinstance(s, Zonotope) else s.vertices
    if s.dim == 1:
        return HPolytope.from_box([pts.min()], [pts.max()])
    hull = ConvexHull(pts)
    eq = hull.equations
    return remove_redundant(HPolytope(eq[:, :-1], -eq[:, -1]))


def vertices(s: ConvexSet) -> np.ndarray:
    if isinstance(s, VPolytope):
        return _hull_points(np.asarray(s.vertices))
    return s.vertices()


def sample_boundary(s: ConvexSet, gauge, count: int, seed: int = 0) -> np.ndarray:
    """Boundary points by ray scaling ``d / gauge(d)`` along random directions."""
    D = unit_directions(s.dim, count, seed)[2 * s.dim:]
    return np.array([d / gauge(d) for d in D])


# ---------------------------------------------------------------------------
# serialization


def set_from_dict(data: dict) -> ConvexSet:
    try:
        rep = data["rep"]
        if rep == "hpoly":
            return HPolytope(data["H"], data["b"], bool(data.get("origin_form", False)))
        if rep == "vpoly":
            return VPolytope(data["vertices"])
        if rep == "zonotope":
            return Zonotope(data["c"], data["G"])
        if rep == "box":
            return Box(data["lo"], data["hi"])
    except KeyError as err:
        raise ConfigurationError(f"set description is missing field {err}") from None
    raise ConfigurationError(f"unknown set representation {data.get('rep')!r}")


def save_set(s: ConvexSet, path) -> None:
    Path(path).write_text(json.dumps(s.to_dict(), indent=1))


def load_set(path) -> ConvexSet:
    return set_from_dict(json.loads(Path(path).read_text()))
