"""Maximal (robust) control-invariant polytopes and invariance verification."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptySetError, InfeasibleError
from .model import LtiModel
from .sets import (
    Box,
    ConvexSet,
    HPolytope,
    VPolytope,
    Zonotope,
    affine_preimage,
    as_hpolytope,
    inscribed_radius,
    intersect,
    is_subset,
    remove_redundant,
    sample_boundary,
    set_distance,
    vertices,
)
from .solver import Status, linprog_highs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InvarianceProblem:
    model: LtiModel
    X: ConvexSet
    U: ConvexSet
    W: ConvexSet | None = None

    def __post_init__(self):
        n, m = self.model.n_x, self.model.n_u
        if self.X.dim != n or self.U.dim != m:
            raise ConfigurationError("constraint sets do not match the model dimensions")
        if self.W is not None and self.W.dim != n:
            raise ConfigurationError("disturbance set does not match the state dimension")
        for name, s in (("X", self.X), ("U", self.U), ("W", self.W)):
            if s is not None and not _origin_interior(s):
                raise ConfigurationError(f"the origin must lie in the interior of {name}")


@dataclass
class InvarianceResult:
    omega: HPolytope
    iterations: int
    converged: bool
    support_gap: float
    nu: float = 1.0
    iterates: list = field(default_factory=list, repr=False)


@dataclass
class VerificationReport:
    checked: int
    violations: list
    max_violation: float
    exact: bool

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        kind = "exact (vertex check)" if self.exact else "probabilistic (sampled boundary)"
        verdict = "PASS" if self.passed else f"FAIL ({len(self.violations)} violations)"
        return f"{verdict}: {self.checked} points checked, {kind}, max violation {self.max_violation:.3e}"


def _origin_interior(s: ConvexSet, margin: float = 1e-9) -> bool:
    if isinstance(s, (HPolytope, Box)):
        h = as_hpolytope(s)
        return h.n_rows == 0 or bool(np.min(h.b) > margin * np.max(np.linalg.norm(h.H, axis=1)))
    try:
        return inscribed_radius(s) > margin
    except Exception:
        eye = np.eye(s.dim)
        return bool(np.all(s.supports(np.vstack([eye, -eye])) > margin))


def _hpoly_constraints(p: InvarianceProblem):
    try:
        return as_hpolytope(p.X), as_hpolytope(p.U)
    except ConfigurationError:
        raise ConfigurationError("maximal_ci_set needs X and U as H-polytopes or boxes") from None


def pre_set(omega: HPolytope, p: InvarianceProblem, max_rows: int = 50000) -> HPolytope:
    """One-step (robust) controllable set of ``omega`` intersected with X."""
    X, U = _hpoly_constraints(p)
    pre = affine_preimage(omega, p.model.A, p.model.B, U, p.W, max_rows=max_rows, x_set=X)
    return remove_redundant(pre)


def maximal_ci_set(
    p: InvarianceProblem,
    max_iter: int = 100,
    tol: float = 1e-6,
    keep_iterates: bool = False,
    max_rows: int = 50000,
) -> InvarianceResult:
    """Backward fixed point ``Omega_{k+1} = Pre(Omega_k) ∩ X`` starting from X.

    Iteration stops once an iterate is contained in its own pre-set (checked
    row by row with support functions), which certifies control invariance.
    ``converged`` reports whether the support gap between successive iterates
    fell below ``tol``.
    """
    X, _ = _hpoly_constraints(p)
    n = p.model.n_x
    omega = remove_redundant(X)
    iterates = [omega] if keep_iterates else []
    gap = np.inf
    converged = False
    for k in range(1, max_iter + 1):
        new = pre_set(omega, p, max_rows=max_rows)
        if new.n_rows == 0 or new.is_empty(1e-12):
            raise EmptySetError("no invariant set containing the origin: iterate became empty")
        if np.min(new.b) <= 1e-9:
            raise EmptySetError("no invariant set containing the origin: origin left the interior")
        if is_subset(omega, new, tol=1e-9):
            log.info("invariant set certified after %d iterations (%d rows)", k, omega.n_rows)
            return InvarianceResult(omega.to_origin_form(), k, True, 0.0 if gap == np.inf else gap,
                                    iterates=iterates)
        gap = set_distance(new, omega, directions=10 * n, extra=np.vstack([X.H, new.H]))
        converged = converged or gap <= tol
        log.debug("iteration %d: %d rows, support gap %.3e", k, new.n_rows, gap)
        omega = new
        if keep_iterates:
            iterates.append(omega)
    raise InfeasibleError(
        f"fixed-point iteration did not produce a certified invariant set in {max_iter} iterations",
        {"support_gap": gap, "converged": converged, "rows": omega.n_rows},
    )


def maximal_rpi_set(
    A_cl,
    X: ConvexSet,
    W: ConvexSet | None = None,
    G=None,
    max_iter: int = 200,
) -> InvarianceResult:
    """Maximal robust positively invariant set of ``x+ = A_cl x + G w`` inside X.

    ``W`` may be a single set or a list of sets; robustness is then required
    against each of them (equivalently, their convex hull).
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    Xh = remove_redundant(as_hpolytope(X))
    n = A_cl.shape[0]
    Gm = np.eye(n) if G is None else np.asarray(G, dtype=float).reshape(n, -1)
    Ws = [] if W is None else (list(W) if isinstance(W, (list, tuple)) else [W])
    omega = Xh
    for k in range(1, max_iter + 1):
        HA = omega.H @ A_cl
        off = np.zeros(omega.n_rows)
        for w in Ws:
            off = np.maximum(off, w.supports(omega.H @ Gm))
        step_set = HPolytope(HA, omega.b - off)
        if np.min(step_set.b) <= 1e-9:
            raise EmptySetError("no robust positively invariant set containing the origin")
        if is_subset(omega, step_set, tol=1e-9):
            return InvarianceResult(omega.to_origin_form(), k, True, 0.0)
        omega = remove_redundant(intersect(omega, step_set))
        if omega.is_empty(1e-12):
            raise EmptySetError("no robust positively invariant set containing the origin")
    raise InfeasibleError(
        f"positively invariant set iteration did not terminate in {max_iter} iterations",
        {"rows": omega.n_rows},
    )


def contract_for_stability(omega_tilde: HPolytope, W: ConvexSet) -> tuple[float, HPolytope]:
    """Smallest per-row factor ``nu`` with ``omega_tilde ⊖ W ⊆ nu * omega_tilde``.

    Returns ``nu`` and the contracted set in origin form.
    """
    om = as_hpolytope(omega_tilde).to_origin_form()
    offsets = W.supports(om.H)
    vals = 1.0 - offsets
    if np.any(vals <= 0.0):
        raise ConfigurationError("disturbance set too large for contraction")
    nu = float(np.max(vals))
    if nu >= 1.0:
        raise ConfigurationError(
            "contraction factor is 1: the disturbance set must contain the origin in its interior"
        )
    return nu, HPolytope(om.H / nu, np.ones(om.n_rows), origin_form=True)


def _w_vertices(W: ConvexSet | None, n: int) -> np.ndarray:
    if W is None:
        return np.zeros((1, n))
    return vertices(W)


def _gauge_hpoly(h: HPolytope):
    om = h.to_origin_form()
    return lambda d: float(np.max(om.H @ d))


def verification_points(omega: ConvexSet, samples: int = 1000, seed: int = 0) -> tuple[np.ndarray, bool]:
    """Points whose one-step feasibility certifies (or samples) invariance of ``omega``."""
    n = omega.dim
    if isinstance(omega, (HPolytope, Box)):
        h = as_hpolytope(omega)
        if n <= 3:
            return h.vertices(), True
        return sample_boundary(h, _gauge_hpoly(h), samples, seed), False
    if isinstance(omega, VPolytope):
        return np.asarray(omega.vertices), True
    if isinstance(omega, Zonotope):
        g = omega.n_generators
        if 2 ** g <= samples:
            signs = np.array(list(itertools.product([-1.0, 1.0], repeat=g)))
            return omega.c + signs @ omega.G.T, True
        rng = np.random.default_rng(seed)
        signs = rng.choice([-1.0, 1.0], size=(samples, g))
        return omega.c + signs @ omega.G.T, False
    raise ConfigurationError(f"unsupported set type {type(omega).__name__}")


def one_step_violation(omega: ConvexSet, p: InvarianceProblem, x: np.ndarray) -> float:
    """Smallest achievable constraint violation of ``A x + B u + w ∈ omega`` over u ∈ U, w ∈ vert(W).

    A value <= 0 means a single input keeps the successor inside ``omega`` for
    every disturbance vertex (and hence, by convexity, every disturbance).
    """
    A, B = p.model.A, p.model.B
    U = as_hpolytope(p.U)
    n, m = p.model.n_x, p.model.n_u
    ax = A @ x
    if isinstance(omega, (HPolytope, Box)):
        h = as_hpolytope(omega)
        b = h.b - (p.W.supports(h.H) if p.W is not None else 0.0)
        # variables (u, t): H B u - t <= b - H A x, U.H u <= U.b
        Aub = np.block([[h.H @ B, -np.ones((h.n_rows, 1))], [U.H, np.zeros((U.n_rows, 1))]])
        hi = np.concatenate([b - h.H @ ax, U.b])
        sol = linprog_highs(np.r_[np.zeros(m), 1.0], Aub, np.full(hi.size, -np.inf), hi)
        return float(sol.objective) if sol.status is Status.OPTIMAL else np.inf
    Wv = _w_vertices(p.W, n)
    nw = Wv.shape[0]
    if isinstance(omega, VPolytope):
        V = np.asarray(omega.vertices)
        k = V.shape[0]
        # variables (u, lambda_1..lambda_nw, t); |A x + B u + w_j - V' l_j| <= t
        nv = m + nw * k + 1
        rows, lo, hi = [], [], []
        for j in range(nw):
            blk = np.zeros((n, nv))
            blk[:, :m] = B
            blk[:, m + j * k:m + (j + 1) * k] = -V.T
            r = -(ax + Wv[j])
            up = blk.copy()
            up[:, -1] = -1.0
            dn = blk.copy()
            dn[:, -1] = 1.0
            rows += [up, dn]
            lo += [np.full(n, -np.inf), r]
            hi += [r, np.full(n, np.inf)]
            s = np.zeros((1, nv))
            s[0, m + j * k:m + (j + 1) * k] = 1.0
            rows.append(s)
            lo.append([1.0])
            hi.append([1.0])
        pos = np.zeros((nw * k, nv))
        pos[:, m:m + nw * k] = np.eye(nw * k)
        rows.append(pos)
        lo.append(np.zeros(nw * k))
        hi.append(np.full(nw * k, np.inf))
        urow = np.zeros((U.n_rows, nv))
        urow[:, :m] = U.H
        rows.append(urow)
        lo.append(np.full(U.n_rows, -np.inf))
        hi.append(U.b)
        c = np.zeros(nv)
        c[-1] = 1.0
        sol = linprog_highs(c, np.vstack(rows), np.concatenate(lo), np.concatenate(hi))
        return float(sol.objective) if sol.status is Status.OPTIMAL else np.inf
    if isinstance(omega, Zonotope):
        G, cz = omega.G, omega.c
        g = G.shape[1]
        # variables (u, lambda_1..lambda_nw, t): A x + B u + w_j = c + G l_j, |l_j| <= 1 + t
        nv = m + nw * g + 1
        rows, lo, hi = [], [], []
        for j in range(nw):
            blk = np.zeros((n, nv))
            blk[:, :m] = B
            blk[:, m + j * g:m + (j + 1) * g] = -G
            r = cz - ax - Wv[j]
            rows.append(blk)
            lo.append(r)
            hi.append(r)
            box = np.zeros((g, nv))
            box[:, m + j * g:m + (j + 1) * g] = np.eye(g)
            up = box.copy()
            up[:, -1] = -1.0
            dn = box.copy()
            dn[:, -1] = 1.0
            rows += [up, dn]
            lo += [np.full(g, -np.inf), np.full(g, -1.0)]
            hi += [np.full(g, 1.0), np.full(g, np.inf)]
        urow = np.zeros((U.n_rows, nv))
        urow[:, :m] = U.H
        rows.append(urow)
        lo.append(np.full(U.n_rows, -np.inf))
        hi.append(U.b)
        c = np.zeros(nv)
        c[-1] = 1.0
        sol = linprog_highs(c, np.vstack(rows), np.concatenate(lo), np.concatenate(hi))
        return float(sol.objective) if sol.status is Status.OPTIMAL else np.inf
    raise ConfigurationError(f"unsupported set type {type(omega).__name__}")


def verify_invariance(
    omega: ConvexSet,
    p: InvarianceProblem,
    samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-8,
) -> VerificationReport:
    """Check (robust) control invariance of ``omega`` for the problem's dynamics.

    H- and V-polytopes in up to three dimensions are checked exactly at their
    vertices; otherwise boundary points are sampled and the report is marked
    as probabilistic. Violations are listed as ``(state, violation)`` pairs.
    """
    if omega.dim != p.model.n_x:
        raise ConfigurationError("set dimension does not match the model")
    if not _origin_interior(omega):
        raise ConfigurationError("verification needs a set with the origin in its interior")
    pts, exact = verification_points(omega, samples, seed)
    violations = []
    worst = -np.inf
    for x in pts:
        v = one_step_violation(omega, p, x)
        worst = max(worst, v)
        if v > tol:
            violations.append((x.copy(), v))
    return VerificationReport(len(pts), violations, float(worst), exact)
