"""Convex QP/LP solving.

Problems are stated in the standard form

    minimize    1/2 z'Pz + q'z
    subject to  lo <= Ac z <= hi

and solved with an operator-splitting (ADMM) scheme with over-relaxation,
adaptive step size and a final polishing step on the detected active set.
A thin wrapper around scipy's HiGHS is also exposed for the many small LPs
issued by the set calculus.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import LinearConstraint, linprog, minimize, nnls

from .errors import ConfigurationError

log = logging.getLogger(__name__)

INF = np.inf


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


@dataclass(frozen=True)
class SolverSettings:
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25
    polish: bool = True
    scaling_iters: int = 10
    eps_prim_inf: float = 1e-6
    eps_dual_inf: float = 1e-6
    check_interval: int = 5


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    Ac: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = self.q.size
        self.P = np.asarray(self.P, dtype=float).reshape(n, n) if np.size(self.P) else np.zeros((n, n))
        self.Ac = np.asarray(self.Ac, dtype=float)
        if self.Ac.size == 0:
            self.Ac = self.Ac.reshape(0, n)
        self.lo = np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.asarray(self.hi, dtype=float).reshape(-1)
        m = self.lo.size
        if self.Ac.ndim != 2 or self.Ac.shape != (m, n) or self.hi.size != m:
            raise ConfigurationError(
                f"dimension mismatch: P {self.P.shape}, q {n}, Ac {self.Ac.shape}, lo {m}, hi {self.hi.size}"
            )
        if np.any(self.lo > self.hi):
            raise ConfigurationError("lower bounds exceed upper bounds")
        if not np.allclose(self.P, self.P.T, atol=1e-12, rtol=0.0):
            raise ConfigurationError("P is not symmetric")
        self.P = 0.5 * (self.P + self.P.T)
        if n and np.any(self.P):
            if np.linalg.eigvalsh(self.P).min() < -1e-8:
                raise ConfigurationError("P is not positive semidefinite")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.lo.size

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass
class QpSolution:
    status: Status
    z: np.ndarray
    y: np.ndarray
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    polished: bool = False
    diagnostic: str = ""
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def residuals(problem: QpProblem, z: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Unscaled primal and dual residuals (infinity norm)."""
    Az = problem.Ac @ z
    prim = np.maximum(problem.lo - Az, 0.0) + np.maximum(Az - problem.hi, 0.0)
    dual = problem.P @ z + problem.q + problem.Ac.T @ y
    p = float(np.max(prim)) if prim.size else 0.0
    d = float(np.max(np.abs(dual))) if dual.size else 0.0
    return p, d


def _ruiz(P, q, A, iters):
    n, m = q.size, A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        col = np.max(np.abs(np.vstack([Ps, As])), axis=0) if n else np.ones(0)
        row = np.max(np.abs(As), axis=1) if m and n else np.ones(m)
        dD = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        dE = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
        Ps = dD[:, None] * Ps * dD[None, :]
        As = dE[:, None] * As * dD[None, :]
        qs = dD * qs
        D *= dD
        E *= dE
        # cost scaling
        mean_col = np.mean(np.max(np.abs(Ps), axis=0)) if n else 0.0
        gamma = 1.0 / np.clip(max(mean_col, np.max(np.abs(qs), initial=0.0)), 1e-4, 1e4)
        Ps *= gamma
        qs *= gamma
        c *= gamma
    return Ps, qs, As, D, E, c


class _Admm:
    def __init__(self, problem: QpProblem, settings: SolverSettings):
        self.prob = problem
        self.s = settings
        P, q, A = problem.P, problem.q, problem.Ac
        self.P, self.q, self.A, self.D, self.E, self.c = _ruiz(P, q, A, settings.scaling_iters)
        self.lo = self.E * problem.lo
        self.hi = self.E * problem.hi
        n, m = problem.n, problem.m
        self.n, self.m = n, m
        self.eq = np.isfinite(self.lo) & np.isfinite(self.hi) & (self.hi - self.lo < 1e-10)
        self.free = ~np.isfinite(self.lo) & ~np.isfinite(self.hi)
        self.set_rho(settings.rho)

    def set_rho(self, rho):
        rho = float(np.clip(rho, 1e-6, 1e6))
        self.rho = rho
        r = np.full(self.m, rho)
        r[self.eq] = 1e3 * rho
        r[self.free] = 1e-6
        self.rho_vec = r
        M = self.P + self.s.sigma * np.eye(self.n) + self.A.T @ (r[:, None] * self.A)
        self.factor = sla.cho_factor(M)

    def unscale(self, x, y):
        return self.D * x, self.E * y / self.c


def _kkt_solve(problem: QpProblem, z: np.ndarray, act: np.ndarray, rhs_b: np.ndarray, delta: float = 1e-9):
    n, k = problem.n, act.size
    A_act = problem.Ac[act]
    K = np.block([[problem.P, A_act.T], [A_act, np.zeros((k, k))]])
    Kreg = K + np.diag(np.concatenate([np.full(n, delta), np.full(k, -delta)]))
    rhs = np.concatenate([-problem.q, rhs_b])
    try:
        lu = sla.lu_factor(Kreg)
    except (ValueError, np.linalg.LinAlgError):
        return None
    # proximal term keeps directions not fixed by P or the active set at z
    sol = sla.lu_solve(lu, rhs + np.concatenate([delta * z, np.zeros(k)]))
    for _ in range(5):
        sol = sol + sla.lu_solve(lu, rhs - K @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:n], sol[n:]


def _polish(problem: QpProblem, z: np.ndarray, y: np.ndarray, tol: float, rounds: int = 20):
    """Solve the KKT system on the active set implied by (z, y).

    Two initial guesses are tried: rows that are primal-active or have a
    multiplier pushing outward, then rows with a significant multiplier. Each
    guess is corrected a few times: violated rows are added and rows whose
    multiplier has the wrong sign are dropped.
    """
    Az = problem.Ac @ z
    lo, hi = problem.lo, problem.hi
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    eq_rows = fin_lo & fin_hi & (hi - lo < 1e-10)
    ysig = 1e-6 * (1.0 + np.max(np.abs(y), initial=0.0))
    guesses = [
        ((Az - lo < -y) & fin_lo, (hi - Az < y) & fin_hi),
        ((y < -ysig) & fin_lo, (y > ysig) & fin_hi),
    ]
    scale = 1.0 + np.max(np.abs(np.concatenate([lo[fin_lo], hi[fin_hi]])), initial=0.0)
    # an overdetermined guess cannot be a nondegenerate active set: keep the strongest multipliers
    n_free = problem.n - int(eq_rows.sum())
    lo_g, hi_g = guesses[1]
    cand = np.flatnonzero((lo_g | hi_g) & ~eq_rows)
    if n_free > 0 and cand.size > n_free:
        keep = cand[np.argsort(-np.abs(y[cand]))[:n_free]]
        mask = np.zeros(problem.m, dtype=bool)
        mask[keep] = True
        guesses.append((lo_g & mask, hi_g & mask))
    tried = set()
    for lower, upper in guesses:
        upper = upper & ~lower & ~eq_rows
        lower = lower | eq_rows
        for _ in range(rounds):
            key = (lower.tobytes(), upper.tobytes())
            # a repeated pattern means the corrections cycle
            if key in tried:
                break
            tried.add(key)
            act = np.flatnonzero(lower | upper)
            out = _kkt_solve(problem, z, act, np.where(lower[act], lo[act], hi[act]))
            if out is None:
                break
            zp, ya = out
            yp = np.zeros(problem.m)
            yp[act] = ya
            # multiplier signs must match the side of the active bound
            ytol = tol * (1.0 + np.max(np.abs(ya), initial=0.0))
            drop_lo = lower & ~eq_rows & (yp > ytol)
            drop_hi = upper & (yp < -ytol)
            Azp = problem.Ac @ zp
            add_lo = ~lower & ~upper & fin_lo & (Azp < lo - tol * scale)
            add_hi = ~lower & ~upper & fin_hi & (Azp > hi + tol * scale)
            if not (drop_lo.any() or drop_hi.any() or add_lo.any() or add_hi.any()):
                return zp, yp
            lower = (lower & ~drop_lo) | add_lo
            upper = (upper & ~drop_hi) | add_hi
    return None


def _rescue(problem: QpProblem, z0: np.ndarray):
    """Dense SQP from a feasible point, then sign-constrained multipliers on the tight rows.

    Used when ADMM stalls on a feasible problem whose feasible set is thin,
    e.g. a single point.
    """
    P, q = problem.P, problem.q
    fin = np.isfinite(problem.lo) | np.isfinite(problem.hi)
    if not fin.any():
        return None
    eq = fin & (problem.hi - problem.lo <= 1e-13)
    ineq = fin & ~eq
    # SLSQP wants equality and inequality rows in separate constraint objects
    cons = [LinearConstraint(problem.Ac[r], problem.lo[r], problem.hi[r]) for r in (eq, ineq) if r.any()]
    with np.errstate(all="ignore"):
        res = minimize(lambda z: 0.5 * z @ P @ z + q @ z, z0, jac=lambda z: P @ z + q,
                       method="SLSQP", constraints=cons, options={"maxiter": 500, "ftol": 1e-14})
    z = res.x if np.all(np.isfinite(res.x)) else z0
    Az = problem.Ac @ z
    scale = 1.0 + np.max(np.abs(Az), initial=0.0)
    at_lo = np.isfinite(problem.lo) & (Az - problem.lo <= 1e-7 * scale)
    at_hi = np.isfinite(problem.hi) & (problem.hi - Az <= 1e-7 * scale)
    # lower-side multipliers are <= 0, upper-side >= 0
    rows = np.concatenate([np.flatnonzero(at_lo), np.flatnonzero(at_hi)])
    signs = np.concatenate([-np.ones(at_lo.sum()), np.ones(at_hi.sum())])
    g = P @ z + q
    y = np.zeros(problem.m)
    if rows.size:
        M = (problem.Ac[rows] * signs[:, None]).T
        mu, _ = nnls(M, -g, maxiter=50 * max(rows.size, 1))
        np.add.at(y, rows, signs * mu)
    return z, y


def _validate(problem: QpProblem, settings: SolverSettings) -> None:
    if settings.eps_abs <= 0 or settings.max_iter < 1:
        raise ConfigurationError("invalid solver settings")


def solve_qp(
    problem: QpProblem,
    settings: SolverSettings | None = None,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> QpSolution:
    """Solve a convex QP in standard form.

    Args:
        problem: The QP. P must be symmetric positive semidefinite.
        settings: Solver tolerances and iteration limits.
        warm_start: Optional primal/dual guess ``(z, y)`` in unscaled units.

    Returns:
        A :class:`QpSolution`. ``Status.INFEASIBLE`` is reported when a primal
        infeasibility certificate is found; an unbounded-below objective is
        reported as ``MAX_ITERATIONS`` with ``diagnostic == "unbounded"``.
    """
    s = settings or SolverSettings()
    _validate(problem, s)
    n, m = problem.n, problem.m
    if n == 0:
        z = np.zeros(0)
        y = np.zeros(m)
        ok = np.all(problem.lo <= 0.0) and np.all(problem.hi >= 0.0)
        return QpSolution(Status.OPTIMAL if ok else Status.INFEASIBLE, z, y, 0.0, 0, 0.0, 0.0)

    w = _Admm(problem, s)
    x = np.zeros(n)
    zc = np.zeros(m)
    y = np.zeros(m)
    if warm_start is not None:
        z0, y0 = warm_start
        x = np.asarray(z0, dtype=float) / w.D
        zc = np.clip(w.A @ x, w.lo, w.hi)
        y = np.asarray(y0, dtype=float) * w.c / w.E
    alpha, sigma = s.alpha, s.sigma
    A, P, q = w.A, w.P, w.q
    polish_at = 25
    feas_check_at = 1000
    best = None
    diagnostic = ""
    it = 0
    for it in range(1, s.max_iter + 1):
        rho = w.rho_vec
        rhs = sigma * x - q + A.T @ (rho * zc - y)
        xt = sla.cho_solve(w.factor, rhs)
        zt = A @ xt
        x_new = alpha * xt + (1 - alpha) * x
        z_relax = alpha * zt + (1 - alpha) * zc
        z_new = np.clip(z_relax + y / rho, w.lo, w.hi)
        y_new = y + rho * (z_relax - z_new)
        dx, dy = x_new - x, y_new - y
        x, zc, y = x_new, z_new, y_new

        if it % s.check_interval and it != s.max_iter and it != polish_at and it != feas_check_at:
            continue

        zu, yu = w.unscale(x, y)
        pr, du = residuals(problem, zu, yu)
        Az = problem.Ac @ zu
        eps_p = s.eps_abs + s.eps_rel * max(np.max(np.abs(Az), initial=0.0),
                                             np.max(np.abs(np.clip(Az, problem.lo, problem.hi)), initial=0.0))
        eps_d = s.eps_abs + s.eps_rel * max(np.max(np.abs(problem.P @ zu), initial=0.0),
                                             np.max(np.abs(problem.Ac.T @ yu), initial=0.0),
                                             np.max(np.abs(problem.q), initial=0.0))
        if pr <= eps_p and du <= eps_d:
            best = (zu, yu, pr, du, False)
            break

        if it == feas_check_at:
            feas = linprog_highs(np.zeros(n), problem.Ac, problem.lo, problem.hi)
            if feas.status is Status.INFEASIBLE:
                return QpSolution(Status.INFEASIBLE, zu, yu, problem.objective(zu), it, pr, du,
                                  diagnostic="constraints infeasible (LP feasibility check)")
            if feas.status is Status.OPTIMAL:
                out = _rescue(problem, feas.z)
                if out is not None:
                    pr2, du2 = residuals(problem, *out)
                    if pr2 <= eps_p and du2 <= eps_d:
                        return QpSolution(Status.OPTIMAL, out[0], out[1], problem.objective(out[0]), it,
                                          pr2, du2, diagnostic="dense fallback")

        if s.polish and it >= polish_at:
            polish_at += min(polish_at, 25)
            pol = _polish(problem, zu, yu, 1e-9)
            if pol is not None:
                pr2, du2 = residuals(problem, *pol)
                if pr2 <= eps_p and du2 <= eps_d:
                    best = (pol[0], pol[1], pr2, du2, True)
                    break

        # primal infeasibility certificate
        ndy = np.max(np.abs(dy), initial=0.0)
        if ndy > 1e-12:
            dyu = w.E * dy
            ndyu = np.max(np.abs(dyu))
            lhs = np.max(np.abs(problem.Ac.T @ dyu), initial=0.0)
            pos, neg = np.maximum(dyu, 0.0), np.minimum(dyu, 0.0)
            with np.errstate(invalid="ignore"):
                hi_term = np.where(pos > 0, problem.hi * pos, 0.0)
                lo_term = np.where(neg < 0, problem.lo * neg, 0.0)
            support = np.sum(hi_term) + np.sum(lo_term)
            if lhs <= s.eps_prim_inf * ndyu and support < -s.eps_prim_inf * ndyu:
                zu, yu = w.unscale(x, y)
                pr, du = residuals(problem, zu, yu)
                return QpSolution(Status.INFEASIBLE, zu, yu, problem.objective(zu), it, pr, du,
                                  diagnostic="primal infeasibility certificate")

        # dual infeasibility (unbounded below)
        ndx = np.max(np.abs(dx), initial=0.0)
        if ndx > 1e-12:
            dxu = w.D * dx
            ndxu = np.max(np.abs(dxu))
            eps = s.eps_dual_inf * ndxu
            Adx = problem.Ac @ dxu
            ok_p = np.max(np.abs(problem.P @ dxu), initial=0.0) <= eps
            ok_q = problem.q @ dxu < -eps
            fin_lo, fin_hi = np.isfinite(problem.lo), np.isfinite(problem.hi)
            ok_a = np.all(np.where(fin_hi, Adx <= eps, True)) and np.all(np.where(fin_lo, Adx >= -eps, True))
            if ok_p and ok_q and ok_a:
                diagnostic = "unbounded"
                zu, yu = w.unscale(x, y)
                pr, du = residuals(problem, zu, yu)
                return QpSolution(Status.MAX_ITERATIONS, zu, yu, -INF, it, pr, du,
                                  diagnostic=diagnostic)

        if s.adaptive_rho and it % s.adaptive_rho_interval == 0:
            Ax = A @ x
            sp = max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(zc), initial=0.0), 1e-10)
            sd = max(np.max(np.abs(P @ x), initial=0.0), np.max(np.abs(A.T @ y), initial=0.0),
                     np.max(np.abs(q), initial=0.0), 1e-10)
            rp = np.max(np.abs(Ax - zc), initial=0.0) / sp
            rd = np.max(np.abs(P @ x + q + A.T @ y), initial=0.0) / sd
            if rd > 0 and rp > 0:
                new_rho = w.rho * np.sqrt(rp / rd)
                if new_rho > 5 * w.rho or new_rho < 0.2 * w.rho:
                    w.set_rho(new_rho)

    if best is None:
        zu, yu = w.unscale(x, y)
        if s.polish:
            pol = _polish(problem, zu, yu, 1e-9)
            if pol is not None:
                pr2, du2 = residuals(problem, *pol)
                if pr2 <= s.eps_abs and du2 <= s.eps_abs:
                    return QpSolution(Status.OPTIMAL, pol[0], pol[1], problem.objective(pol[0]), it,
                                      pr2, du2, polished=True)
        pr, du = residuals(problem, zu, yu)
        # the certificate can need far more iterations than the optimum would; settle it with an LP
        if np.isfinite(pr):
            feas = linprog_highs(np.zeros(n), problem.Ac, problem.lo, problem.hi)
            if feas.status is Status.INFEASIBLE:
                return QpSolution(Status.INFEASIBLE, zu, yu, problem.objective(zu), it, pr, du,
                                  diagnostic="constraints infeasible (LP feasibility check)")
            if feas.status is Status.OPTIMAL:
                out = _rescue(problem, feas.z)
                if out is not None:
                    pr2, du2 = residuals(problem, *out)
                    if pr2 <= s.eps_abs and du2 <= s.eps_abs:
                        return QpSolution(Status.OPTIMAL, out[0], out[1], problem.objective(out[0]), it,
                                          pr2, du2, diagnostic="dense fallback")
        diverging = np.max(np.abs(zu), initial=0.0) > 1e8
        return QpSolution(Status.MAX_ITERATIONS, zu, yu, problem.objective(zu), it, pr, du,
                          diagnostic="unbounded" if diverging else "iteration limit reached")

    zu, yu, pr, du, polished = best
    # a polish of a converged iterate usually tightens residuals by orders of magnitude
    if s.polish and not polished:
        pol = _polish(problem, zu, yu, 1e-9)
        if pol is not None:
            pr2, du2 = residuals(problem, *pol)
            if max(pr2, du2) <= max(pr, du):
                zu, yu, pr, du, polished = pol[0], pol[1], pr2, du2, True
    return QpSolution(Status.OPTIMAL, zu, yu, problem.objective(zu), it, pr, du, polished=polished)


def solve_lp(
    c,
    Ac,
    lo,
    hi,
    settings: SolverSettings | None = None,
    backend: str = "admm",
) -> QpSolution:
    """Minimize c'z subject to lo <= Ac z <= hi.

    ``backend="admm"`` runs :func:`solve_qp` with a zero cost matrix;
    ``backend="highs"`` hands the problem to scipy's HiGHS simplex/IPM.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    n = c.size
    if backend == "admm":
        return solve_qp(QpProblem(np.zeros((n, n)), c, Ac, lo, hi), settings)
    if backend != "highs":
        raise ConfigurationError(f"unknown LP backend {backend!r}")
    Ac = np.asarray(Ac, dtype=float).reshape(-1, n)
    lo = np.asarray(lo, dtype=float).reshape(-1)
    hi = np.asarray(hi, dtype=float).reshape(-1)
    if Ac.shape[0] != lo.size or lo.size != hi.size:
        raise ConfigurationError("dimension mismatch in LP data")
    return linprog_highs(c, Ac, lo, hi)


def linprog_highs(c, Ac, lo, hi) -> QpSolution:
    m, n = Ac.shape
    eq = np.isfinite(lo) & np.isfinite(hi) & (hi - lo <= 1e-13)
    up = np.isfinite(hi) & ~eq
    dn = np.isfinite(lo) & ~eq
    A_ub = np.vstack([Ac[up], -Ac[dn]])
    b_ub = np.concatenate([hi[up], -lo[dn]])
    res = linprog(
        c,
        A_ub=A_ub if A_ub.size else None,
        b_ub=b_ub if A_ub.size else None,
        A_eq=Ac[eq] if eq.any() else None,
        b_eq=hi[eq] if eq.any() else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    y = np.zeros(m)
    if res.status == 0:
        z = res.x
        nu, nd = int(up.sum()), int(dn.sum())
        if nu + nd:
            marg = res.ineqlin.marginals
            y[up] -= marg[:nu]
            y[dn] += marg[nu:]
        if eq.any():
            y[eq] = -res.eqlin.marginals
        prob = QpProblem(np.zeros((n, n)), c, Ac, lo, hi)
        pr, du = residuals(prob, z, y)
        return QpSolution(Status.OPTIMAL, z, y, float(c @ z), int(res.nit), pr, du)
    z = np.full(n, np.nan)
    if res.status == 2:
        return QpSolution(Status.INFEASIBLE, z, y, np.nan, int(res.nit), np.inf, np.inf,
                          diagnostic=res.message)
    if res.status == 3:
        return QpSolution(Status.MAX_ITERATIONS, z, y, -INF, int(res.nit), np.inf, np.inf,
                          diagnostic="unbounded")
    return QpSolution(Status.MAX_ITERATIONS, z, y, np.nan, int(res.nit), np.inf, np.inf,
                      diagnostic=res.message)
