"""Set-based control barrier functions ``h(x) = 1 - gamma(x)``.

``gamma(x)`` is the smallest nonnegative scaling of the safe-set generator that
contains ``x`` (a gauge function). It is closed form for half-space polytopes
and an LP for vertex polytopes and zonotopes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptySetError, InfeasibleError
from .sets import Box, ConvexSet, HPolytope, VPolytope, Zonotope, inscribed_radius, set_from_dict
from .solver import Status, linprog_highs

CUBIC_EPS = 1e-3


@dataclass(frozen=True)
class ClassKappaE:
    """Extended class-K function used in the decrease bound.

    ``linear``: s*r; ``cubic``: s*r**3 + 1e-3*r; ``tanh``: s*tanh(scale*r).
    """

    kind: str = "linear"
    s: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "cubic", "tanh"):
            raise ConfigurationError(f"unknown class-K kind {self.kind!r}")
        if not self.s > 0 or not self.scale > 0:
            raise ConfigurationError("class-K parameters must be positive")
        grid = np.linspace(-0.999, 3.0, 100)
        vals = self(grid)
        if self(0.0) != 0.0 or np.any(np.diff(vals) <= 0):
            raise ConfigurationError("class-K function is not strictly increasing through zero")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "linear":
            out = self.s * r
        elif self.kind == "cubic":
            out = self.s * r**3 + CUBIC_EPS * r
        else:
            out = self.s * np.tanh(self.scale * r)
        return out if out.ndim else float(out)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassKappaE":
        return cls(d.get("kind", "linear"), float(d.get("s", 1.0)), float(d.get("scale", 1.0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "s": self.s, "scale": self.scale}


def decrease_bound(alpha: ClassKappaE, hx: float) -> float:
    """``min(alpha(h), h)`` for ``h >= 0`` and ``max(alpha(h), h)`` otherwise."""
    a = alpha(hx)
    return min(a, hx) if hx >= 0 else max(a, hx)


def _gamma_hpoly(om: HPolytope, x: np.ndarray) -> float:
    if om.n_rows == 0:
        return 0.0
    return max(0.0, float(np.max(om.H @ x)))


def gamma_hpoly_lp(omega: HPolytope, x) -> float:
    """Generic LP form ``min g s.t. Hx <= g b, g >= 0`` (no origin-form shortcut)."""
    x = np.asarray(x, dtype=float)
    A = np.vstack([-omega.b[:, None], [[-1.0]]])
    hi = np.concatenate([-omega.H @ x, [0.0]])
    sol = linprog_highs(np.array([1.0]), A, np.full(hi.size, -np.inf), hi)
    if sol.status is not Status.OPTIMAL:
        raise InfeasibleError("gauge LP failed", {"status": sol.status.value})
    return float(sol.z[0])


def gamma_vpoly(V: np.ndarray, x: np.ndarray) -> float:
    """Gauge of ``conv(0, v_1, ..., v_N)``.

    Solves ``min sum(mu) s.t. sum(mu_i v_i) = x, mu >= 0`` (vertex 0 is the
    origin and carries the remaining weight). Inside the polytope this equals
    ``min 1 - lambda_0`` over convex combinations.
    """
    P = V[1:]
    k = P.shape[0]
    if k == 0:
        if np.any(x != 0):
            raise InfeasibleError("state outside representable cone")
        return 0.0
    A = np.vstack([P.T, np.eye(k)])
    lo = np.concatenate([x, np.zeros(k)])
    hi = np.concatenate([x, np.full(k, np.inf)])
    sol = linprog_highs(np.ones(k), A, lo, hi)
    if sol.status is not Status.OPTIMAL:
        raise InfeasibleError("state outside representable cone", {"x": x.tolist()})
    return max(0.0, float(sol.objective))


def gamma_zonotope(z: Zonotope, x: np.ndarray) -> float:
    """``min g s.t. x = g c + G l, ||l||_inf <= g``."""
    n, ng = z.G.shape
    # variables (g, l)
    A = np.block([
        [z.c[:, None], z.G],
        [-np.ones((ng, 1)), np.eye(ng)],
        [np.ones((ng, 1)), np.eye(ng)],
        [np.ones((1, 1)), np.zeros((1, ng))],
    ])
    lo = np.concatenate([x, np.full(ng, -np.inf), np.zeros(ng), [0.0]])
    hi = np.concatenate([x, np.zeros(ng), np.full(ng, np.inf), [np.inf]])
    c = np.zeros(ng + 1)
    c[0] = 1.0
    sol = linprog_highs(c, A, lo, hi)
    if sol.status is not Status.OPTIMAL:
        raise InfeasibleError("zonotope gauge LP infeasible", {"x": x.tolist()})
    return max(0.0, float(sol.z[0]))


class SetCbf:
    """CBF built from a set containing the origin in its interior."""

    def __init__(self, omega: ConvexSet, alpha: ClassKappaE | None = None):
        self.alpha = alpha or ClassKappaE()
        if isinstance(omega, Box):
            omega = omega.to_hpolytope()
        if isinstance(omega, HPolytope):
            try:
                omega = omega.to_origin_form()
            except EmptySetError as err:
                raise ConfigurationError(str(err)) from None
        elif isinstance(omega, VPolytope):
            if omega.vertices.shape[0] < 2:
                raise ConfigurationError("V-polytope needs vertices besides the origin")
        elif not isinstance(omega, Zonotope):
            raise ConfigurationError(f"unsupported set type {type(omega).__name__}")
        self.omega = omega
        self._check_interior()

    def _check_interior(self):
        om = self.omega
        if isinstance(om, HPolytope):
            if om.n_rows == 0:
                raise ConfigurationError("safe-set generator must be bounded")
            return
        eye = np.eye(om.dim)
        if not np.all(om.supports(np.vstack([eye, -eye])) > 1e-9):
            raise ConfigurationError("the origin must lie in the interior of the safe-set generator")
        if isinstance(om, Zonotope) and np.linalg.matrix_rank(om.G) < om.dim:
            raise ConfigurationError("a flat zonotope cannot contain the origin in its interior")

    @property
    def representation(self) -> str:
        return self.omega.rep

    @property
    def dim(self) -> int:
        return self.omega.dim

    def gamma(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ConfigurationError(f"state has {x.size} entries, set has dimension {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("state must be finite")
        om = self.omega
        if isinstance(om, HPolytope):
            return _gamma_hpoly(om, x)
        if isinstance(om, VPolytope):
            return gamma_vpoly(np.asarray(om.vertices), x)
        return gamma_zonotope(om, x)

    def gamma_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if isinstance(self.omega, HPolytope):
            return np.maximum(0.0, np.max(X @ self.omega.H.T, axis=1))
        return np.array([self.gamma(x) for x in X])

    def h(self, x) -> float:
        return 1.0 - self.gamma(x)

    def delta_h(self, hx: float) -> float:
        return decrease_bound(self.alpha, hx)

    def lipschitz_constant(self) -> float:
        """Euclidean Lipschitz constant of gamma: one over the inscribed-ball radius."""
        return 1.0 / inscribed_radius(self.omega)

    def to_dict(self) -> dict:
        return {"omega": self.omega.to_dict(), "alpha": self.alpha.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SetCbf":
        return cls(set_from_dict(d["omega"]), ClassKappaE.from_dict(d.get("alpha", {})))


def gamma(cbf: SetCbf, x) -> float:
    return cbf.gamma(x)


def h(cbf: SetCbf, x) -> float:
    return cbf.h(x)


def delta_h(cbf: SetCbf, hx: float) -> float:
    return cbf.delta_h(hx)
