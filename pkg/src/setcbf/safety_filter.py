"""Per-step safety filters.

:func:`step` solves

    min  1/2 (u - u_des)' R (u - u_des) + rho * g^2
    s.t. u in U,  0 <= g <= 1 - h(x) + dh(x),  A x + B u in g * Omega

with the set-scaling constraint encoded for the representation of Omega.
:func:`step_approx` enforces the decrease condition with a learned barrier
and :func:`step_stochastic` runs the nominal filter on an indirect-feedback
decomposition ``x = z + e``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .cbf import ClassKappaE, SetCbf, decrease_bound
from .errors import ConfigurationError, EmptySetError, InfeasibleError
from .invariance import InvarianceProblem, maximal_ci_set
from .model import LtiModel, spectral_radius
from .sets import Box, ConvexSet, HPolytope, VPolytope, Zonotope, as_hpolytope
from .solver import QpProblem, SolverSettings, Status, solve_qp

log = logging.getLogger(__name__)

INTERVENTION_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class FilterSpec:
    model: LtiModel
    U: ConvexSet
    cbf: SetCbf
    R: np.ndarray | None = None
    rho: float | None = None
    h_mode: str = "exact"
    fallback: bool = False
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.h_mode not in ("exact", "carryover"):
            raise ConfigurationError(f"h_mode must be 'exact' or 'carryover', got {self.h_mode!r}")
        m = self.model.n_u
        R = np.eye(m) if self.R is None else np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (m, m) or not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ConfigurationError("R must be symmetric positive definite")
        object.__setattr__(self, "R", R)
        rho = self.rho
        if rho is None:
            rho = 1e-6 if self.h_mode == "carryover" else 0.0
        if rho < 0:
            raise ConfigurationError("rho must be nonnegative")
        object.__setattr__(self, "rho", float(rho))
        if self.U.dim != m or self.cbf.dim != self.model.n_x:
            raise ConfigurationError("filter sets do not match the model dimensions")
        if not isinstance(self.U, (Box, HPolytope)):
            raise ConfigurationError("input constraints must be a box or an H-polytope")


@dataclass
class FilterResult:
    u: np.ndarray
    gamma_plus: float
    h_current: float
    intervened: bool
    status: Status
    iterations: int = 0
    solve_time: float = 0.0
    fallback_used: bool = False
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RolloutContext:
    """Mutable per-rollout state: carried gauge value, warm start, nominal state."""

    prev_gamma_plus: float | None = None
    warm_start: tuple | None = None
    z: np.ndarray | None = None


def _input_rows(U: ConvexSet, m: int):
    if isinstance(U, Box):
        return np.eye(m), np.asarray(U.lo), np.asarray(U.hi)
    Uh = as_hpolytope(U)
    return Uh.H, np.full(Uh.n_rows, -np.inf), Uh.b


def _scaling_rows(omega: ConvexSet, ax: np.ndarray, B: np.ndarray):
    """Rows encoding ``ax + B u in g * omega`` over variables ``(u, g, aux)``.

    Returns ``(A_rows, lo, hi, n_aux)`` with ``A_rows`` over ``(u, g, aux)``.
    """
    n, m = B.shape
    if isinstance(omega, HPolytope):
        H = omega.H
        A = np.hstack([H @ B, -np.ones((H.shape[0], 1))])
        return A, np.full(H.shape[0], -np.inf), -H @ ax, 0
    if isinstance(omega, VPolytope):
        P = np.asarray(omega.vertices)[1:]
        k = P.shape[0]
        # B u - sum mu_i v_i = -A x ;  sum mu_i - g = 0 ;  mu >= 0
        eq = np.hstack([B, np.zeros((n, 1)), -P.T])
        tot = np.concatenate([np.zeros(m), [-1.0], np.ones(k)])[None, :]
        pos = np.hstack([np.zeros((k, m + 1)), np.eye(k)])
        A = np.vstack([eq, tot, pos])
        lo = np.concatenate([-ax, [0.0], np.zeros(k)])
        hi = np.concatenate([-ax, [0.0], np.full(k, np.inf)])
        return A, lo, hi, k
    if isinstance(omega, Zonotope):
        G, c = omega.G, omega.c
        g = G.shape[1]
        # B u - g c - G l = -A x ;  |l_j| <= g
        eq = np.hstack([B, -c[:, None], -G])
        up = np.hstack([np.zeros((g, m)), -np.ones((g, 1)), np.eye(g)])
        dn = np.hstack([np.zeros((g, m)), np.ones((g, 1)), np.eye(g)])
        A = np.vstack([eq, up, dn])
        lo = np.concatenate([-ax, np.full(g, -np.inf), np.zeros(g)])
        hi = np.concatenate([-ax, np.zeros(g), np.full(g, np.inf)])
        return A, lo, hi, g
    raise ConfigurationError(f"unsupported set type {type(omega).__name__}")


def build_qp(spec: FilterSpec, x: np.ndarray, u_des: np.ndarray, hx: float, invariance_only: bool = False):
    """Assemble the filter QP; returns the problem and the number of auxiliary variables."""
    model = spec.model
    m = model.n_u
    S, s_lo, s_hi, n_aux = _scaling_rows(spec.cbf.omega, model.A @ x, model.B)
    nv = m + 1 + n_aux
    Hu, u_lo, u_hi = _input_rows(spec.U, m)
    rows_u = np.hstack([Hu, np.zeros((Hu.shape[0], 1 + n_aux))])
    g_row = np.zeros((1, nv))
    g_row[0, m] = 1.0
    g_hi = np.inf if invariance_only else 1.0 - hx + spec.cbf.delta_h(hx)
    Ac = np.vstack([rows_u, g_row, S])
    lo = np.concatenate([u_lo, [0.0], s_lo])
    hi = np.concatenate([u_hi, [g_hi], s_hi])
    P = np.zeros((nv, nv))
    q = np.zeros(nv)
    if invariance_only:
        w = 1e-6
        P[:m, :m] = w * spec.R
        q[:m] = -w * spec.R @ u_des
        q[m] = 1.0
    else:
        P[:m, :m] = spec.R
        q[:m] = -spec.R @ u_des
        P[m, m] = 2.0 * spec.rho
    return QpProblem(P, q, Ac, lo, hi), n_aux


def _current_h(spec: FilterSpec, x, ctx: RolloutContext | None) -> float:
    if spec.h_mode == "carryover" and ctx is not None and ctx.prev_gamma_plus is not None:
        return 1.0 - ctx.prev_gamma_plus
    return spec.cbf.h(x)


def step(spec: FilterSpec, x, u_des, ctx: RolloutContext | None = None) -> FilterResult:
    """One safety-filter evaluation.

    Raises:
        InfeasibleError: the state is outside the filter's domain (and the
            invariance-only fallback is disabled or failed as well), or the
            solver did not converge.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    if x.size != spec.model.n_x or u_des.size != spec.model.n_u:
        raise ConfigurationError("state or desired input has the wrong dimension")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u_des))):
        raise ConfigurationError("state and desired input must be finite")
    hx = _current_h(spec, x, ctx)
    prob, _ = build_qp(spec, x, u_des, hx)
    warm = ctx.warm_start if ctx is not None else None
    if warm is not None and (warm[0].size != prob.n or warm[1].size != prob.m):
        warm = None
    t0 = time.perf_counter()
    sol = solve_qp(prob, spec.settings, warm_start=warm)
    elapsed = time.perf_counter() - t0
    m = spec.model.n_u
    fallback_used = False
    if not sol.optimal:
        diag = {"status": sol.status.value, "diagnostic": sol.diagnostic, "h": hx,
                "primal_residual": sol.primal_residual, "dual_residual": sol.dual_residual}
        if not spec.fallback:
            msg = "state outside filter domain" if sol.status is Status.INFEASIBLE else "filter QP did not converge"
            raise InfeasibleError(msg, diag)
        log.warning("filter infeasible at h=%.3g, applying invariance-only fallback", hx)
        prob, _ = build_qp(spec, x, u_des, hx, invariance_only=True)
        sol = solve_qp(prob, spec.settings)
        elapsed = time.perf_counter() - t0
        if not sol.optimal:
            raise InfeasibleError("state outside filter domain (fallback failed)", diag)
        fallback_used = True
    u = sol.z[:m].copy()
    g = max(0.0, float(sol.z[m]))
    if ctx is not None:
        ctx.prev_gamma_plus = g
        ctx.warm_start = (sol.z, sol.y)
    return FilterResult(
        u=u,
        gamma_plus=g,
        h_current=hx,
        intervened=bool(np.linalg.norm(u - u_des) > INTERVENTION_TOL),
        status=sol.status,
        iterations=sol.iterations,
        solve_time=elapsed,
        fallback_used=fallback_used,
        diagnostics={"primal_residual": sol.primal_residual, "dual_residual": sol.dual_residual,
                     "polished": sol.polished},
    )


# ---------------------------------------------------------------------------
# approximate (learned) barrier


def _u_bounds(U: ConvexSet):
    bb = U.bounding_box() if not isinstance(U, Box) else U
    return np.asarray(bb.lo), np.asarray(bb.hi)


def step_approx(
    hbar,
    spec: FilterSpec,
    x,
    u_des,
    trust_region: float | np.ndarray | None = None,
    max_passes: int = 12,
    cut_tol: float = 1e-7,
) -> FilterResult:
    """Filter with a learned barrier ``hbar`` and robustness margin ``hbar.epsilon``.

    Enforces ``hbar(Ax + Bu) - eps >= hbar(x) - dh(x)`` through linearizations
    of ``hbar`` in ``u`` inside a trust region: first around ``u_des``, then
    around each new solution. Earlier linearizations are kept as cutting
    planes, and passes continue (at least two, at most ``max_passes``) until
    the nonlinear constraint holds to ``cut_tol``. ``hbar`` must provide
    ``value(x)``, ``gradient(x)`` and ``epsilon``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    model = spec.model
    m = model.n_u
    eps = float(hbar.epsilon)
    hx = float(hbar.value(x))
    rhs = hx - decrease_bound(spec.cbf.alpha, hx) + eps
    lo_u, hi_u = _u_bounds(spec.U)
    span = hi_u - lo_u
    r0 = 0.2 * span if trust_region is None else np.broadcast_to(np.asarray(trust_region, float), (m,))
    Hu, ulo, uhi = _input_rows(spec.U, m)
    t0 = time.perf_counter()
    iters = 0

    cuts_g, cuts_c = [], []

    def true_residual(u):
        return float(hbar.value(model.A @ x + model.B @ u)) - rhs

    def add_cut(u0):
        # val + grad (u - u0) >= rhs; for a concave hbar every cut is an outer bound
        xp = model.A @ x + model.B @ u0
        grad = np.asarray(hbar.gradient(xp), dtype=float) @ model.B
        cuts_g.append(-grad)
        cuts_c.append(float(hbar.value(xp)) - grad @ u0 - rhs)

    def solve_pass(center):
        nonlocal iters
        radius = np.array(r0, dtype=float)
        while True:
            rows = np.vstack([Hu, np.array(cuts_g), np.eye(m)])
            lo = np.concatenate([ulo, np.full(len(cuts_g), -np.inf), center - radius])
            hi = np.concatenate([uhi, cuts_c, center + radius])
            sol = solve_qp(QpProblem(spec.R, -spec.R @ u_des, rows, lo, hi), spec.settings)
            iters += sol.iterations
            if sol.optimal or np.all(radius >= span):
                return sol
            radius = np.minimum(2.0 * radius, span)

    u0 = np.clip(u_des, lo_u, hi_u)
    add_cut(u0)
    sol = solve_pass(u0)
    passes = 1
    while sol.optimal and passes < max_passes:
        if passes >= 2 and true_residual(sol.z) >= -cut_tol:
            break
        add_cut(sol.z)
        nxt = solve_pass(sol.z)
        passes += 1
        if not nxt.optimal:
            break
        sol = nxt
    elapsed = time.perf_counter() - t0
    if not sol.optimal:
        raise InfeasibleError(
            "approximate filter infeasible" + (" (margin larger than 1)" if eps > 1 else ""),
            {"h": hx, "epsilon": eps, "status": sol.status.value},
        )
    u = sol.z.copy()
    h_next = float(hbar.value(model.A @ x + model.B @ u))
    return FilterResult(
        u=u,
        gamma_plus=1.0 - h_next,
        h_current=hx,
        intervened=bool(np.linalg.norm(u - u_des) > INTERVENTION_TOL),
        status=sol.status,
        iterations=iters,
        solve_time=elapsed,
        diagnostics={"constraint_residual": h_next - rhs, "conservative_margin": eps > 1, "passes": passes},
    )


# ---------------------------------------------------------------------------
# stochastic disturbances with indirect feedback


@dataclass(frozen=True, eq=False)
class StochasticFilterSpec:
    """Nominal/error decomposition with error feedback ``u_e = K e``.

    ``noise`` is ``"gaussian"`` (``Sigma_w`` covariance) or ``"uniform"``
    (``w_bound`` half-widths of a box). ``p_x``/``p_u`` hold one probability
    level per constraint row (scalars broadcast).
    """

    model: LtiModel
    K: np.ndarray
    X: ConvexSet
    U: ConvexSet
    noise: str = "gaussian"
    Sigma_w: np.ndarray | None = None
    w_bound: np.ndarray | None = None
    p_x: float | np.ndarray = 0.9
    p_u: float | np.ndarray = 0.9
    alpha: ClassKappaE = field(default_factory=ClassKappaE)
    R: np.ndarray | None = None
    rho: float = 0.0

    def __post_init__(self):
        if self.model.G is None:
            raise ConfigurationError("stochastic filter needs a disturbance channel G")
        K = np.atleast_2d(np.asarray(self.K, dtype=float)).reshape(self.model.n_u, self.model.n_x)
        object.__setattr__(self, "K", K)
        if spectral_radius(self.model.closed_loop(K)) >= 1.0 - 1e-9:
            raise ConfigurationError("A + BK must be Schur stable")
        if self.noise not in ("gaussian", "uniform"):
            raise ConfigurationError(f"unknown noise model {self.noise!r}")
        for p in (self.p_x, self.p_u):
            p = np.asarray(p, dtype=float)
            if np.any(p <= 0) or np.any(p > 1):
                raise ConfigurationError("probability levels must lie in (0, 1]")
        if self.noise == "gaussian" and self.Sigma_w is None:
            raise ConfigurationError("gaussian noise needs Sigma_w")
        if self.noise == "uniform" and self.w_bound is None:
            raise ConfigurationError("uniform noise needs w_bound")


def stationary_error_covariance(spec: StochasticFilterSpec, tol: float = 1e-10, max_iter: int = 100000):
    """Fixed point of ``S <- (A+BK) S (A+BK)' + G Sigma_w G'`` from ``S = 0``."""
    AK = spec.model.closed_loop(spec.K)
    G = spec.model.G
    Q = G @ np.atleast_2d(spec.Sigma_w) @ G.T
    S = np.zeros_like(AK)
    for _ in range(max_iter):
        S_next = AK @ S @ AK.T + Q
        if np.max(np.abs(S_next - S)) <= tol:
            return S_next
        S = S_next
    raise InfeasibleError("error covariance iteration did not converge")


def _levels(p, rows: int) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    return np.broadcast_to(p, (rows,)) if p.size == 1 else p


def tighten_constraints(spec: StochasticFilterSpec, horizon_for_prs: int = 200) -> tuple[HPolytope, HPolytope]:
    """Constraint sets for the nominal state and input.

    Gaussian noise: each row ``H_j`` is tightened by ``z_p sqrt(H_j S H_j')``
    with ``S`` the stationary error covariance and ``z_p`` the one-sided
    Gaussian quantile (covariances grow monotonically from zero, so the
    stationary one covers every time step). Uniform noise: worst-case offsets
    of the error reachable set after ``horizon_for_prs`` steps.
    """
    X = as_hpolytope(spec.X)
    U = as_hpolytope(spec.U)
    K = spec.K
    if spec.noise == "gaussian":
        px, pu = _levels(spec.p_x, X.n_rows), _levels(spec.p_u, U.n_rows)
        if np.any(px >= 1.0) or np.any(pu >= 1.0):
            raise ConfigurationError("probability level 1 has an unbounded Gaussian quantile")
        S = stationary_error_covariance(spec)
        sx = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X.H, S, X.H), 0.0))
        su = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", U.H @ K, S, U.H @ K), 0.0))
        off_x = ndtri(px) * sx
        off_u = ndtri(pu) * su
    else:
        AK = spec.model.closed_loop(K)
        G = spec.model.G
        W = Box.symmetric(np.asarray(spec.w_bound, dtype=float))
        off_x = np.zeros(X.n_rows)
        off_u = np.zeros(U.n_rows)
        M = np.eye(AK.shape[0])
        for _ in range(horizon_for_prs):
            off_x += W.supports(X.H @ M @ G)
            off_u += W.supports(U.H @ K @ M @ G)
            M = AK @ M
    Xb = HPolytope(X.H, X.b - off_x)
    Ub = HPolytope(U.H, U.b - off_u)
    for name, s in (("state", Xb), ("input", Ub)):
        if np.min(s.b) <= 0 or s.is_empty():
            raise EmptySetError(f"probability levels unattainable: tightened {name} set is empty")
    return Xb, Ub


@dataclass(frozen=True, eq=False)
class StochasticFilter:
    spec: StochasticFilterSpec
    nominal: FilterSpec
    X_bar: HPolytope
    U_bar: HPolytope


def build_stochastic_filter(spec: StochasticFilterSpec, horizon_for_prs: int = 200, **invariance_kw) -> StochasticFilter:
    """Tighten constraints and build the nominal set-based filter on them."""
    Xb, Ub = tighten_constraints(spec, horizon_for_prs)
    nominal_model = LtiModel(spec.model.A, spec.model.B)
    res = maximal_ci_set(InvarianceProblem(nominal_model, Xb, Ub), **invariance_kw)
    nominal = FilterSpec(nominal_model, Ub, SetCbf(res.omega, spec.alpha), R=spec.R, rho=spec.rho)
    return StochasticFilter(spec, nominal, Xb, Ub)


def step_stochastic(sf: StochasticFilter, x, u_des, ctx: RolloutContext) -> tuple[np.ndarray, np.ndarray]:
    """Indirect-feedback step; returns the applied input and the next nominal state.

    ``ctx.z`` holds the nominal state; it is initialized to ``x`` on first use.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    if ctx.z is None:
        ctx.z = x.copy()
    z = ctx.z
    fb = sf.spec.K @ (x - z)
    # G(v + K e, u_des) is the nominal objective with a shifted desired input
    res = step(sf.nominal, z, u_des - fb, ctx)
    v = res.u
    z_next = sf.nominal.model.A @ z + sf.nominal.model.B @ v
    ctx.z = z_next
    return v + fb, z_next
