"""Scenarios, closed-loop rollouts and trajectory output."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .approx import ApproxCbf
from .cbf import ClassKappaE, SetCbf
from .errors import ConfigurationError, EmptySetError, InfeasibleError
from .invariance import InvarianceProblem, contract_for_stability, maximal_ci_set, maximal_rpi_set
from .model import LtiModel, exact_discretize
from .predictive import PredictiveCbf, build_tightening, lqr_gain, step_predictive
from .safety_filter import FilterResult, FilterSpec, RolloutContext, step, step_approx
from .sets import Box, ConvexSet, HPolytope, as_hpolytope, load_set, set_from_dict

log = logging.getLogger(__name__)

SET_SOURCES = ("compute-hpoly", "load-set-file", "predictive")
U_DES_KINDS = ("constant", "uniform", "file")


def _set_or_none(d):
    return None if d is None else set_from_dict(d)


@dataclass
class Scenario:
    """Everything needed for a closed-loop rollout.

    ``set_source`` is one of
    ``{"kind": "compute-hpoly", "method": "maximal-ci" | "lqr-rpi", ...}``,
    ``{"kind": "load-set-file", "path": ...}`` or
    ``{"kind": "predictive", "horizon": N, "Q": ..., "R_lqr": ...}``.
    ``x0`` is a point or ``{"kind": "random-gauge", "gamma": [lo, hi]}``,
    which draws a random direction and places it at a uniformly drawn gauge
    level of the filter's safe set.
    """

    name: str
    model: LtiModel
    X: ConvexSet
    U: ConvexSet
    set_source: dict = field(default_factory=lambda: {"kind": "compute-hpoly", "method": "maximal-ci"})
    W: ConvexSet | None = None
    nu_policy: str = "none"
    alpha: ClassKappaE = field(default_factory=ClassKappaE)
    u_des: dict = field(default_factory=lambda: {"kind": "uniform"})
    steps: int = 200
    seed: int = 0
    rho: float | None = None
    h_mode: str = "exact"
    fallback: bool = False
    x0: object = None
    filter: str = "exact"
    approx_model: str | None = None
    simulate_disturbance: bool = False
    description: str = ""
    base_dir: str = "."
    model_spec: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n, m = self.model.n_x, self.model.n_u
        if self.X.dim != n or self.U.dim != m:
            raise ConfigurationError(f"scenario {self.name!r}: constraint sets do not match the model")
        if self.W is not None and self.W.dim != n:
            raise ConfigurationError(f"scenario {self.name!r}: W must live in the state space")
        kind = self.set_source.get("kind")
        if kind not in SET_SOURCES:
            raise ConfigurationError(f"unknown set source {kind!r}")
        if kind == "load-set-file" and not self._resolve(self.set_source.get("path", "")).is_file():
            raise ConfigurationError(f"set file {self.set_source.get('path')!r} does not exist")
        if self.nu_policy not in ("none", "contract"):
            raise ConfigurationError(f"unknown nu policy {self.nu_policy!r}")
        if self.nu_policy == "contract" and self.W is None:
            raise ConfigurationError("nu policy 'contract' needs a disturbance set W")
        if self.u_des.get("kind") not in U_DES_KINDS:
            raise ConfigurationError(f"unknown u_des policy {self.u_des.get('kind')!r}")
        if self.u_des["kind"] == "constant" and np.size(self.u_des.get("value", [])) != m:
            raise ConfigurationError("constant u_des has the wrong dimension")
        if self.u_des["kind"] == "file" and not self._resolve(self.u_des.get("path", "")).is_file():
            raise ConfigurationError(f"u_des file {self.u_des.get('path')!r} does not exist")
        if self.steps < 0:
            raise ConfigurationError("steps must be nonnegative")
        if self.h_mode not in ("exact", "carryover"):
            raise ConfigurationError(f"unknown h_mode {self.h_mode!r}")
        if self.filter not in ("exact", "approx"):
            raise ConfigurationError(f"unknown filter kind {self.filter!r}")
        if self.filter == "approx" and not self.approx_model:
            raise ConfigurationError("approximate filter needs approx_model")
        if self.simulate_disturbance and self.W is None:
            raise ConfigurationError("simulate_disturbance needs W")
        if isinstance(self.x0, (list, tuple, np.ndarray)) and np.size(self.x0) != n:
            raise ConfigurationError("x0 has the wrong dimension")

    def _resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def replace(self, **changes) -> "Scenario":
        new = copy.copy(self)
        for k, v in changes.items():
            if not hasattr(new, k):
                raise ConfigurationError(f"unknown scenario field {k!r}")
            setattr(new, k, v)
        new.__post_init__()
        return new

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "Scenario":
        try:
            mspec = d["model"]
            if "Ac" in mspec:
                A, B = exact_discretize(mspec["Ac"], mspec["Bc"], float(mspec["dt"]))
            else:
                A, B = mspec["A"], mspec["B"]
            model = LtiModel(A, B, mspec.get("G"))
            return cls(
                name=d.get("name", "scenario"),
                model=model,
                X=set_from_dict(d["X"]),
                U=set_from_dict(d["U"]),
                set_source=dict(d.get("set_source", {"kind": "compute-hpoly", "method": "maximal-ci"})),
                W=_set_or_none(d.get("W")),
                nu_policy=d.get("nu_policy", "none"),
                alpha=ClassKappaE.from_dict(d.get("alpha", {})),
                u_des=dict(d.get("u_des", {"kind": "uniform"})),
                steps=int(d.get("steps", 200)),
                seed=int(d.get("seed", 0)),
                rho=d.get("rho"),
                h_mode=d.get("h_mode", "exact"),
                fallback=bool(d.get("fallback", False)),
                x0=d.get("x0"),
                filter=d.get("filter", "exact"),
                approx_model=d.get("approx_model"),
                simulate_disturbance=bool(d.get("simulate_disturbance", False)),
                description=d.get("description", ""),
                base_dir=base_dir,
                model_spec=mspec,
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigurationError):
                raise
            raise ConfigurationError(f"invalid scenario: {e}") from e

    def to_dict(self) -> dict:
        mspec = self.model_spec or {"A": self.model.A.tolist(), "B": self.model.B.tolist()}
        if self.model.G is not None and "G" not in mspec:
            mspec = {**mspec, "G": self.model.G.tolist()}
        x0 = self.x0.tolist() if isinstance(self.x0, np.ndarray) else self.x0
        return {
            "name": self.name,
            "description": self.description,
            "model": mspec,
            "X": self.X.to_dict(),
            "U": self.U.to_dict(),
            "set_source": self.set_source,
            "W": None if self.W is None else self.W.to_dict(),
            "nu_policy": self.nu_policy,
            "alpha": self.alpha.to_dict(),
            "u_des": self.u_des,
            "steps": self.steps,
            "seed": self.seed,
            "rho": self.rho,
            "h_mode": self.h_mode,
            "fallback": self.fallback,
            "x0": x0,
            "filter": self.filter,
            "approx_model": self.approx_model,
            "simulate_disturbance": self.simulate_disturbance,
        }


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with open(path) as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read scenario {str(path)!r}: {e}") from e
    return Scenario.from_dict(d, base_dir=str(path.parent))


# ---------------------------------------------------------------------------
# builtin scenarios


def _msd_chain(masses: int, m: float = 1.0, k: float = 1.0, c: float = 0.5):
    """Chain wall-m1-...-mN with identical springs and dampers; one force per mass."""
    L = np.zeros((masses, masses))
    for i in range(masses):
        L[i, i] = 2.0 if i < masses - 1 else 1.0
        if i > 0:
            L[i, i - 1] = L[i - 1, i] = -1.0
    Ac = np.block([[np.zeros((masses, masses)), np.eye(masses)], [-k / m * L, -c / m * L]])
    Bc = np.vstack([np.zeros((masses, masses)), np.eye(masses) / m])
    return Ac, Bc


def _octagon(radius: float) -> dict:
    ang = np.arange(8) * np.pi / 4
    return {"rep": "hpoly", "H": np.column_stack([np.cos(ang), np.sin(ang)]).tolist(),
            "b": [radius] * 8}


def builtin_scenarios() -> list[Scenario]:
    """The three study scenarios.

    ``motor2d``
        Two-state current dynamics of a motor-like plant (rotating-frame
        coupling, resistive decay), exact discretization with dt = 0.05,
        octagonal current limit, box voltage limit, alpha(h) = s h.
    ``msd2``
        Chain of two unit masses with springs 1 N/m and dampers 0.5 N s/m,
        one force per mass, dt = 0.1 (exact discretization); positions and
        velocities in [-2.5, 2.5], forces in [-2.5, 2.5]. The safe set is the
        maximal control invariant set; the artificial disturbance set
        W = 0.05 * unit box is used by robust variants.
    ``motion``
        Lateral-offset double integrator (offset, lateral speed) with
        acceleration input, dt = 0.1, and a predictive safe set with horizon
        10, LQR tube gain and W = 0.01 * unit box.
    """
    scen = []
    Ac = [[-2.0, 4.0], [-4.0, -2.0]]
    Bc = [[4.0, 0.0], [0.0, 4.0]]
    scen.append(Scenario.from_dict({
        "name": "motor2d",
        "description": "two-state motor-like current dynamics with polytopic current and voltage limits",
        "model": {"Ac": Ac, "Bc": Bc, "dt": 0.05},
        "X": _octagon(1.0),
        "U": {"rep": "box", "lo": [-1.5, -1.5], "hi": [1.5, 1.5]},
        "set_source": {"kind": "compute-hpoly", "method": "maximal-ci"},
        "alpha": {"kind": "linear", "s": 1.0},
        "u_des": {"kind": "uniform"},
        "steps": 200,
        "x0": [0.0, 0.0],
    }))
    Ac, Bc = _msd_chain(2)
    scen.append(Scenario.from_dict({
        "name": "msd2",
        "description": "two-mass spring-damper chain, random desired forces",
        "model": {"Ac": Ac.tolist(), "Bc": Bc.tolist(), "dt": 0.1},
        "X": {"rep": "box", "lo": [-2.5] * 4, "hi": [2.5] * 4},
        "U": {"rep": "box", "lo": [-2.5] * 2, "hi": [2.5] * 2},
        "set_source": {"kind": "compute-hpoly", "method": "maximal-ci"},
        "W": {"rep": "box", "lo": [-0.05] * 4, "hi": [0.05] * 4},
        "alpha": {"kind": "linear", "s": 1.0},
        "u_des": {"kind": "uniform"},
        "steps": 200,
        "x0": [0.0] * 4,
    }))
    scen.append(Scenario.from_dict({
        "name": "motion",
        "description": "lateral-offset double integrator with a predictive safe set",
        "model": {"Ac": [[0.0, 1.0], [0.0, 0.0]], "Bc": [[0.0], [1.0]], "dt": 0.1},
        "X": {"rep": "box", "lo": [-1.0, -1.5], "hi": [1.0, 1.5]},
        "U": {"rep": "box", "lo": [-1.0], "hi": [1.0]},
        "set_source": {"kind": "predictive", "horizon": 10, "Q": [[1.0, 0.0], [0.0, 1.0]], "R_lqr": [[1.0]]},
        "W": {"rep": "box", "lo": [-0.01, -0.01], "hi": [0.01, 0.01]},
        "alpha": {"kind": "linear", "s": 1.0},
        "u_des": {"kind": "constant", "value": [1.0]},
        "steps": 300,
        "x0": [0.0, 0.0],
    }))
    return scen


def builtin_scenario(name: str) -> Scenario:
    for s in builtin_scenarios():
        if s.name == name:
            return s
    raise ConfigurationError(f"unknown builtin scenario {name!r}")


# ---------------------------------------------------------------------------
# set construction and filters


@dataclass
class SafeSetInfo:
    """Result of resolving a scenario's set source."""

    omega: HPolytope | ConvexSet | None
    omega_tilde: ConvexSet | None = None
    nu: float = 1.0
    predictive: PredictiveCbf | None = None
    iterations: int = 0


_SET_CACHE: dict = {}


def _cache_key(s: Scenario) -> str:
    d = s.to_dict()
    keep = {k: d[k] for k in ("model", "X", "U", "set_source", "W", "nu_policy")}
    return json.dumps(keep, sort_keys=True) + "|" + s.base_dir


def _lqr_from(source: dict, model: LtiModel) -> np.ndarray:
    n, m = model.n_x, model.n_u
    Q = np.asarray(source.get("Q", np.eye(n)), dtype=float)
    R = np.asarray(source.get("R_lqr", np.eye(m)), dtype=float)
    return lqr_gain(model.A, model.B, Q, R)


def compute_safe_set(s: Scenario, use_cache: bool = True) -> SafeSetInfo:
    """Resolve the scenario's set source (cached per set-relevant fields)."""
    key = _cache_key(s)
    if use_cache and key in _SET_CACHE:
        return _SET_CACHE[key]
    src = s.set_source
    kind = src["kind"]
    if kind == "predictive":
        N = int(src.get("horizon", 0))
        ps = build_tightening(s.model, s.X, s.U, s.W, _lqr_from(src, s.model), N)
        info = SafeSetInfo(None, predictive=PredictiveCbf(ps, s.alpha))
    else:
        if kind == "load-set-file":
            omega_tilde = load_set(s._resolve(src["path"]))
            iters = 0
        else:
            method = src.get("method", "maximal-ci")
            robust_W = s.W if s.nu_policy == "contract" else None
            if method == "maximal-ci":
                res = maximal_ci_set(InvarianceProblem(s.model, s.X, s.U, robust_W),
                                     max_iter=int(src.get("max_iter", 100)),
                                     max_rows=int(src.get("max_rows", 50000)))
            elif method == "lqr-rpi":
                K = _lqr_from(src, s.model)
                Xh, Uh = as_hpolytope(s.X), as_hpolytope(s.U)
                region = HPolytope(np.vstack([Xh.H, Uh.H @ K]), np.concatenate([Xh.b, Uh.b]))
                res = maximal_rpi_set(s.model.closed_loop(K), region, robust_W,
                                      max_iter=int(src.get("max_iter", 200)))
            else:
                raise ConfigurationError(f"unknown set computation method {method!r}")
            omega_tilde, iters = res.omega, res.iterations
        if s.nu_policy == "contract":
            nu, omega = contract_for_stability(as_hpolytope(omega_tilde), s.W)
        else:
            nu, omega = 1.0, omega_tilde
        info = SafeSetInfo(omega, omega_tilde, nu, iterations=iters)
    if use_cache:
        _SET_CACHE[key] = info
    return info


class _Controller:
    """Uniform per-step interface over the filter variants."""

    def __init__(self, s: Scenario, info: SafeSetInfo):
        self.s = s
        self.info = info
        self.hbar = None
        if info.predictive is not None:
            self.cbf = info.predictive
            self.spec = None
        else:
            self.cbf = SetCbf(info.omega, s.alpha)
            self.spec = FilterSpec(s.model, s.U, self.cbf, rho=s.rho, h_mode=s.h_mode, fallback=s.fallback)
            if s.filter == "approx":
                self.hbar = ApproxCbf.load(s._resolve(s.approx_model))

    def step(self, x, u_des, ctx: RolloutContext) -> FilterResult:
        if self.info.predictive is not None:
            return step_predictive(self.info.predictive, x, u_des, self.s.U,
                                   rho=self.s.rho or 0.0, ctx=ctx)
        if self.hbar is not None:
            return step_approx(self.hbar, self.spec, x, u_des)
        return step(self.spec, x, u_des, ctx)


def make_controller(s: Scenario) -> _Controller:
    return _Controller(s, compute_safe_set(s))


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class Trajectory:
    n_x: int
    n_u: int
    x: list = field(default_factory=list)
    u_des: list = field(default_factory=list)
    u: list = field(default_factory=list)
    h: list = field(default_factory=list)
    gamma_plus: list = field(default_factory=list)
    intervened: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    solve_us: list = field(default_factory=list)
    w: list = field(default_factory=list)
    x_final: np.ndarray | None = None
    error: dict | None = None

    def __len__(self) -> int:
        return len(self.x)

    @property
    def aborted(self) -> bool:
        return self.error is not None

    def states(self) -> np.ndarray:
        """All visited states including the final one."""
        rows = list(self.x)
        if self.x_final is not None:
            rows.append(self.x_final)
        return np.array(rows).reshape(-1, self.n_x)

    def header(self) -> list[str]:
        return (["k"] + [f"x_{i}" for i in range(self.n_x)] + [f"u_des_{i}" for i in range(self.n_u)]
                + [f"u_{i}" for i in range(self.n_u)] + ["h", "gamma_plus", "intervened", "iters", "solve_us"])

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for k in range(len(self.x)):
            row = [str(k)]
            row += [repr(float(v)) for v in self.x[k]]
            row += [repr(float(v)) for v in self.u_des[k]]
            row += [repr(float(v)) for v in self.u[k]]
            row += [repr(float(self.h[k])), repr(float(self.gamma_plus[k])), str(int(self.intervened[k])),
                    str(int(self.iterations[k])), repr(float(self.solve_us[k]) if timing else 0.0)]
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path, timing: bool = True) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv(timing))


def _sample_in(U: ConvexSet, rng, max_tries: int = 10000) -> np.ndarray:
    bb = U if isinstance(U, Box) else U.bounding_box()
    for _ in range(max_tries):
        u = rng.uniform(bb.lo, bb.hi)
        if isinstance(U, Box) or U.contains(u):
            return u
    raise ConfigurationError("could not rejection-sample the input set")


def _u_des_source(s: Scenario, rng):
    pol = s.u_des
    if pol["kind"] == "constant":
        val = np.asarray(pol["value"], dtype=float).reshape(-1)
        return lambda k: val
    if pol["kind"] == "uniform":
        return lambda k: _sample_in(s.U, rng)
    data = np.atleast_2d(np.loadtxt(s._resolve(pol["path"]), delimiter=",", ndmin=2))
    if data.shape[1] != s.model.n_u:
        raise ConfigurationError("u_des file has the wrong number of columns")
    return lambda k: data[min(k, data.shape[0] - 1)]


def initial_state(s: Scenario, ctrl: _Controller, rng) -> np.ndarray:
    n = s.model.n_x
    if s.x0 is None:
        return np.zeros(n)
    if isinstance(s.x0, dict):
        if s.x0.get("kind") != "random-gauge":
            raise ConfigurationError(f"unknown x0 policy {s.x0.get('kind')!r}")
        lo, hi = s.x0.get("gamma", [0.0, 1.0])
        d = rng.normal(size=n)
        g = ctrl.cbf.gamma(d)
        return d / g * rng.uniform(lo, hi)
    return np.asarray(s.x0, dtype=float).reshape(-1)


def run(s: Scenario, controller: _Controller | None = None) -> Trajectory:
    """Closed-loop rollout; deterministic for a fixed scenario and seed.

    A filter failure (infeasible step without fallback) stops the run; the
    partial trajectory carries the error record.
    """
    ctrl = controller or make_controller(s)
    rng = np.random.default_rng(s.seed)
    x = initial_state(s, ctrl, rng)
    u_des_at = _u_des_source(s, rng)
    ctx = RolloutContext()
    traj = Trajectory(s.model.n_x, s.model.n_u)
    W = s.W.bounding_box() if s.simulate_disturbance else None
    for k in range(s.steps):
        ud = u_des_at(k)
        try:
            res = ctrl.step(x, ud, ctx)
        except InfeasibleError as e:
            traj.error = {"step": k, "message": str(e), "diagnostics": e.diagnostics}
            log.error("run %s aborted at step %d: %s", s.name, k, e)
            break
        traj.x.append(x.copy())
        traj.u_des.append(np.array(ud, dtype=float))
        traj.u.append(res.u)
        traj.h.append(res.h_current)
        traj.gamma_plus.append(res.gamma_plus)
        traj.intervened.append(res.intervened)
        traj.iterations.append(res.iterations)
        traj.solve_us.append(res.solve_time * 1e6)
        w = None
        if W is not None:
            w = rng.uniform(W.lo, W.hi)
            traj.w.append(w)
        x = s.model.A @ x + s.model.B @ res.u + (w if w is not None else 0.0)
    traj.x_final = x
    return traj


__all__ = [
    "Scenario",
    "SafeSetInfo",
    "Trajectory",
    "builtin_scenario",
    "builtin_scenarios",
    "compute_safe_set",
    "load_scenario",
    "make_controller",
    "run",
    "EmptySetError",
]
