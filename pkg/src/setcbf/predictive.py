"""Predictive safe sets: implicit sets defined by a tightened finite-horizon program.

The gauge of the implicit set is the smallest ``g >= 0`` such that a
trajectory from ``x`` satisfies ``x_i in g X_i``, ``u_i in g U_i`` and
``x_N in g X_f``. All tightening offsets are kept per row as sums of support
functions, never as explicit Minkowski sums.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cbf import ClassKappaE, decrease_bound
from .errors import ConfigurationError, EmptySetError, InfeasibleError
from .invariance import maximal_rpi_set
from .model import LtiModel, spectral_radius
from .safety_filter import INTERVENTION_TOL, FilterResult, RolloutContext
from .sets import Box, ConvexSet, HPolytope, as_hpolytope
from .solver import QpProblem, SolverSettings, Status, linprog_highs, solve_qp


def lqr_gain(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100000) -> np.ndarray:
    """Infinite-horizon LQR gain ``K`` (``u = K x``) from the iterated Riccati recursion."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        K = -np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A + B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P))):
            P = P_next
            break
        P = P_next
    else:
        raise InfeasibleError("Riccati recursion did not converge")
    BtP = B.T @ P
    return -np.linalg.solve(R + BtP @ B, BtP @ A)


@dataclass(frozen=True, eq=False)
class PredictiveSafeSet:
    """Stage sets ``X_0..X_{N-1}``, ``U_0..U_{N-1}`` and terminal set ``X_f``."""

    model: LtiModel
    X_stages: tuple
    U_stages: tuple
    X_f: HPolytope
    K_t: np.ndarray | None = None
    W: ConvexSet | None = None

    def __post_init__(self):
        N = len(self.X_stages)
        if N < 1:
            raise ConfigurationError("horizon must be >= 1")
        if len(self.U_stages) != N:
            raise ConfigurationError("need one input set per stage")
        xs = tuple(as_hpolytope(s) for s in self.X_stages)
        us = tuple(as_hpolytope(s) for s in self.U_stages)
        object.__setattr__(self, "X_stages", xs)
        object.__setattr__(self, "U_stages", us)
        object.__setattr__(self, "X_f", as_hpolytope(self.X_f))
        n, m = self.model.n_x, self.model.n_u
        for i, (xi, ui) in enumerate(zip(xs, us)):
            if xi.dim != n or ui.dim != m:
                raise ConfigurationError(f"stage {i} sets do not match the model dimensions")
        for name, s in [*((f"X_{i}", x) for i, x in enumerate(xs)),
                        *((f"U_{i}", u) for i, u in enumerate(us)), ("X_f", self.X_f)]:
            if s.n_rows and np.min(s.b) <= 0:
                raise ConfigurationError(f"the origin must lie in the interior of {name}")

    @property
    def horizon(self) -> int:
        return len(self.X_stages)


def build_tightening(model: LtiModel, X: ConvexSet, U: ConvexSet, W: ConvexSet | None, K_t, N: int,
                     max_iter: int = 200) -> PredictiveSafeSet:
    """Tightened stage sets and terminal set for the tube gain ``K_t``.

    ``X_i = X ⊖ ⊕_{l<i} A_K^l G W`` and ``U_i = U ⊖ K_t(...)``; the terminal
    set is the maximal robust positively invariant set of ``A_K`` inside
    ``X_N ∩ {x : K_t x ∈ U_N}``, robust against both ``G W`` and ``A_K^N G W``.

    Raises:
        ConfigurationError: ``N < 1`` or an unstable closed loop.
        EmptySetError: a tightened stage set no longer contains the origin.
    """
    if N < 1:
        raise ConfigurationError("horizon must be >= 1")
    n, m = model.n_x, model.n_u
    K = np.atleast_2d(np.asarray(K_t, dtype=float)).reshape(m, n)
    AK = model.closed_loop(K)
    if spectral_radius(AK) >= 1.0 - 1e-9:
        raise ConfigurationError("A + B K_t must be Schur stable")
    Xh, Uh = as_hpolytope(X), as_hpolytope(U)
    G = np.eye(n) if model.G is None else model.G
    off_x = np.zeros(Xh.n_rows)
    off_u = np.zeros(Uh.n_rows)
    M = np.eye(n)
    xs, us = [], []
    for i in range(N + 1):
        xi = HPolytope(Xh.H, Xh.b - off_x)
        ui = HPolytope(Uh.H, Uh.b - off_u)
        if np.min(xi.b) <= 0 or np.min(ui.b) <= 0 or xi.is_empty() or ui.is_empty():
            raise EmptySetError(f"tightening empties the constraint sets at stage {i}")
        xs.append(xi)
        us.append(ui)
        if W is not None:
            off_x = off_x + W.supports(Xh.H @ M @ G)
            off_u = off_u + W.supports(Uh.H @ K @ M @ G)
        M = AK @ M
    # M now equals A_K^(N+1); terminal robustness uses A_K^N
    MN = np.linalg.matrix_power(AK, N)
    region = HPolytope(np.vstack([xs[N].H, us[N].H @ K]), np.concatenate([xs[N].b, us[N].b]))
    ws = None if W is None else [W, _LinearImage(MN @ G, W)]
    Xf = maximal_rpi_set(AK, region, ws, G=np.eye(n), max_iter=max_iter).omega
    return PredictiveSafeSet(model, tuple(xs[:N]), tuple(us[:N]), Xf, K, W)


class _LinearImage(ConvexSet):
    """Support-only view of ``M W``."""

    def __init__(self, M, W: ConvexSet):
        self.M = np.asarray(M, dtype=float)
        self.W = W

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def support(self, d) -> float:
        return float(self.W.support(self.M.T @ np.asarray(d, dtype=float)))

    def supports(self, directions) -> np.ndarray:
        return self.W.supports(np.atleast_2d(directions) @ self.M)


def _trajectory_rows(ps: PredictiveSafeSet, n_pre: int):
    """Constraint blocks over ``(pre..., g, x_0..x_N, u_0..u_{N-1})``.

    Returns the matrix, bounds, and the column offsets of ``g``, ``x_0`` and
    ``u_0``. Dynamics rows ``x_{i+1} - A x_i - B u_i = 0`` are included; the
    initial condition is left to the caller.
    """
    A, B = ps.model.A, ps.model.B
    n, m, N = ps.model.n_x, ps.model.n_u, ps.horizon
    ig = n_pre
    ix = ig + 1
    iu = ix + (N + 1) * n
    nv = iu + N * m
    rows, lo, hi = [], [], []

    def block(shape_rows):
        return np.zeros((shape_rows, nv))

    for i in range(N):
        r = block(n)
        r[:, ix + (i + 1) * n: ix + (i + 2) * n] = np.eye(n)
        r[:, ix + i * n: ix + (i + 1) * n] = -A
        r[:, iu + i * m: iu + (i + 1) * m] = -B
        rows.append(r)
        lo.append(np.zeros(n))
        hi.append(np.zeros(n))
    scaled = [(ps.X_stages[i], ix + i * n) for i in range(N)]
    scaled += [(ps.U_stages[i], iu + i * m) for i in range(N)]
    scaled.append((ps.X_f, ix + N * n))
    for s, col in scaled:
        r = block(s.n_rows)
        r[:, col: col + s.dim] = s.H
        r[:, ig] = -s.b
        rows.append(r)
        lo.append(np.full(s.n_rows, -np.inf))
        hi.append(np.zeros(s.n_rows))
    return np.vstack(rows), np.concatenate(lo), np.concatenate(hi), (ig, ix, iu, nv)


class PredictiveCbf:
    """Barrier ``h = 1 - gamma`` of the implicit predictive safe set."""

    def __init__(self, safe_set: PredictiveSafeSet, alpha: ClassKappaE | None = None):
        self.safe_set = safe_set
        self.alpha = alpha or ClassKappaE()
        self._rows = _trajectory_rows(safe_set, 0)

    @property
    def dim(self) -> int:
        return self.safe_set.model.n_x

    def gamma(self, x) -> float:
        return gamma_predictive(self, x)

    def gamma_many(self, X) -> np.ndarray:
        return np.array([self.gamma(x) for x in np.atleast_2d(X)])

    def h(self, x) -> float:
        return 1.0 - self.gamma(x)

    def delta_h(self, hx: float) -> float:
        return decrease_bound(self.alpha, hx)


def gamma_predictive(p: PredictiveCbf, x) -> float:
    """Smallest scaling of the stage and terminal sets admitting a trajectory from ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != p.dim or not np.all(np.isfinite(x)):
        raise ConfigurationError("state must be finite with the model's dimension")
    A_rows, lo, hi, (ig, ix, _, nv) = p._rows
    n = p.dim
    init = np.zeros((n, nv))
    init[:, ix: ix + n] = np.eye(n)
    gpos = np.zeros((1, nv))
    gpos[0, ig] = 1.0
    Ac = np.vstack([A_rows, init, gpos])
    lo = np.concatenate([lo, x, [0.0]])
    hi = np.concatenate([hi, x, [np.inf]])
    c = np.zeros(nv)
    c[ig] = 1.0
    sol = linprog_highs(c, Ac, lo, hi)
    if sol.status is not Status.OPTIMAL:
        raise InfeasibleError("predictive gauge LP failed: check the stage sets",
                              {"status": sol.status.value, "diagnostic": sol.diagnostic})
    return max(0.0, float(sol.z[ig]))


def step_predictive(
    p: PredictiveCbf,
    x,
    u_des,
    U: ConvexSet,
    R=None,
    rho: float = 0.0,
    settings: SolverSettings | None = None,
    ctx: RolloutContext | None = None,
) -> FilterResult:
    """Safety filter whose next predicted state starts a scaled feasible trajectory.

    The applied input satisfies the unscaled ``u ∈ U`` while the predicted
    trajectory from ``x_0 = A x + B u`` lives in the ``g``-scaled stage sets.

    Raises:
        InfeasibleError: the state is outside the filter's domain.
    """
    ps = p.safe_set
    model = ps.model
    n, m = model.n_x, model.n_u
    x = np.asarray(x, dtype=float).reshape(-1)
    u_des = np.asarray(u_des, dtype=float).reshape(-1)
    R = np.eye(m) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    if rho < 0:
        raise ConfigurationError("rho must be nonnegative")
    hx = p.h(x)
    A_rows, lo_t, hi_t, (ig, ix, _, nv) = _trajectory_rows(ps, m)
    # x_0 - B u = A x
    init = np.zeros((n, nv))
    init[:, ix: ix + n] = np.eye(n)
    init[:, :m] = -model.B
    g_row = np.zeros((1, nv))
    g_row[0, ig] = 1.0
    if isinstance(U, Box):
        Hu, u_lo, u_hi = np.eye(m), np.asarray(U.lo), np.asarray(U.hi)
    else:
        Uh = as_hpolytope(U)
        Hu, u_lo, u_hi = Uh.H, np.full(Uh.n_rows, -np.inf), Uh.b
    u_rows = np.zeros((Hu.shape[0], nv))
    u_rows[:, :m] = Hu
    Ac = np.vstack([u_rows, g_row, init, A_rows])
    lo = np.concatenate([u_lo, [0.0], model.A @ x, lo_t])
    hi = np.concatenate([u_hi, [1.0 - hx + decrease_bound(p.alpha, hx)], model.A @ x, hi_t])
    P = np.zeros((nv, nv))
    P[:m, :m] = R
    P[ig, ig] = 2.0 * rho
    q = np.zeros(nv)
    q[:m] = -R @ u_des
    warm = ctx.warm_start if ctx is not None else None
    if warm is not None and (warm[0].size != nv or warm[1].size != Ac.shape[0]):
        warm = None
    t0 = time.perf_counter()
    sol = solve_qp(QpProblem(P, q, Ac, lo, hi), settings, warm_start=warm)
    elapsed = time.perf_counter() - t0
    if not sol.optimal:
        msg = "state outside filter domain" if sol.status is Status.INFEASIBLE else "filter QP did not converge"
        raise InfeasibleError(msg, {"status": sol.status.value, "h": hx, "diagnostic": sol.diagnostic})
    u = sol.z[:m].copy()
    g = max(0.0, float(sol.z[ig]))
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
        diagnostics={"primal_residual": sol.primal_residual, "dual_residual": sol.dual_residual,
                     "polished": sol.polished},
    )
