"""Learned approximations of the set-based barrier.

A regressor is fitted to samples ``(x_j, gamma(x_j))``; its barrier is
``hbar = 1 - gamma_hat`` and the robustness margin ``epsilon`` is a safety
factor times the largest error on a held-out split.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigurationError, InfeasibleError, SetCbfError
from .sets import Box, HPolytope

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    X: np.ndarray
    gamma: np.ndarray
    domain: Box
    seed: int

    def __len__(self) -> int:
        return self.X.shape[0]


def sample_dataset(cbf, domain: Box, n: int, seed: int = 0, batch: int = 4096) -> Dataset:
    """Uniform samples over ``domain`` labelled with the exact gauge.

    States outside a vertex polytope's cone have no gauge and are redrawn.
    """
    if n < 0:
        raise ConfigurationError("sample count must be nonnegative")
    dim = domain.dim
    omega = getattr(cbf, "omega", None)
    if omega is not None:
        bb = omega.bounding_box()
        if np.any(bb.lo < domain.lo - 1e-9) or np.any(bb.hi > domain.hi + 1e-9):
            raise ConfigurationError("sampling domain must contain the safe set's bounding box")
    rng = np.random.default_rng(seed)
    xs, gs = [], []
    have = 0
    while have < n:
        cand = rng.uniform(domain.lo, domain.hi, size=(min(batch, n - have), dim))
        if isinstance(omega, HPolytope):
            xs.append(cand)
            gs.append(cbf.gamma_many(cand))
            have += cand.shape[0]
            continue
        for x in cand:
            try:
                g = cbf.gamma(x)
            except InfeasibleError:
                continue
            xs.append(x[None, :])
            gs.append(np.array([g]))
            have += 1
    X = np.vstack(xs) if xs else np.zeros((0, dim))
    g = np.concatenate(gs) if gs else np.zeros(0)
    return Dataset(X, g, domain, seed)


@dataclass
class FitConfig:
    model: str = "network"
    hidden: tuple = (64, 64)
    degree: int = 3
    epochs: int = 300
    learning_rate: float = 3e-2
    refine_iters: int = 2000
    loss_power: int = 4
    origin_anchor: float = 0.002
    val_fraction: float = 0.1
    safety_factor: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("network", "polynomial"):
            raise ConfigurationError(f"unknown regressor {self.model!r}")
        if self.loss_power < 2 or self.loss_power % 2:
            raise ConfigurationError("loss_power must be an even integer >= 2")
        if not 0 < self.val_fraction < 1 or self.safety_factor < 1:
            raise ConfigurationError("invalid validation split or safety factor")
        self.hidden = tuple(int(h) for h in self.hidden)


def _poly_powers(dim: int, degree: int) -> np.ndarray:
    rows = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), d):
            p = np.zeros(dim, dtype=int)
            for i in combo:
                p[i] += 1
            rows.append(p)
    return np.array(rows, dtype=int)


class ApproxCbf:
    """Regressor for the gauge with a robustness margin.

    Inputs are mapped affinely from the training domain to ``[-1, 1]^n``.
    Networks use tanh hidden layers and a linear output.
    """

    def __init__(self, kind: str, params: list, domain: Box, epsilon: float = 0.0,
                 metadata: dict | None = None, powers: np.ndarray | None = None):
        if kind not in ("network", "polynomial"):
            raise ConfigurationError(f"unknown regressor {kind!r}")
        if epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")
        self.kind = kind
        self.params = [np.asarray(p, dtype=float) for p in params]
        self.domain = domain
        self.epsilon = float(epsilon)
        self.metadata = dict(metadata or {})
        self.powers = None if powers is None else np.asarray(powers, dtype=int)
        self._mid = 0.5 * (domain.lo + domain.hi)
        self._half = 0.5 * (domain.hi - domain.lo)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def _normalize(self, X):
        return (X - self._mid) / self._half

    def gamma_many(self, X) -> np.ndarray:
        Z = self._normalize(np.atleast_2d(np.asarray(X, dtype=float)))
        if self.kind == "polynomial":
            return _poly_features(Z, self.powers) @ self.params[0]
        return _forward(self.params, Z)[0][-1][:, 0]

    def value(self, x) -> float:
        """``hbar(x) = 1 - gamma_hat(x)``."""
        return 1.0 - float(self.gamma_many(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def values(self, X) -> np.ndarray:
        return 1.0 - self.gamma_many(X)

    def gradient(self, x) -> np.ndarray:
        """Gradient of ``hbar`` with respect to the state."""
        z = self._normalize(np.asarray(x, dtype=float).reshape(1, -1))
        if self.kind == "polynomial":
            g = np.zeros(self.dim)
            c = self.params[0]
            for i in range(self.dim):
                dp = self.powers.copy()
                coef = dp[:, i].astype(float)
                dp[:, i] = np.maximum(dp[:, i] - 1, 0)
                g[i] = (_poly_features(z, dp)[0] * coef) @ c
        else:
            acts, _ = _forward(self.params, z)
            delta = np.ones((1, 1))
            nl = len(self.params) // 2
            for layer in reversed(range(nl)):
                W = self.params[2 * layer]
                delta = delta @ W.T
                if layer > 0:
                    delta = delta * (1.0 - acts[layer] ** 2)
            g = delta[0]
        return -g / self._half

    def in_domain(self, x) -> bool:
        return self.domain.contains(np.asarray(x, dtype=float).reshape(-1))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "params": [p.tolist() for p in self.params],
            "domain": self.domain.to_dict(),
            "epsilon": self.epsilon,
            "metadata": self.metadata,
        }
        if self.kind == "network":
            d["layer_sizes"] = [self.params[0].shape[0]] + [self.params[i].shape[1] for i in range(0, len(self.params), 2)]
        else:
            d["powers"] = self.powers.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ApproxCbf":
        dom = d["domain"]
        return cls(d["kind"], d["params"], Box(dom["lo"], dom["hi"]), d.get("epsilon", 0.0),
                   d.get("metadata"), d.get("powers"))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "ApproxCbf":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _poly_features(Z: np.ndarray, powers: np.ndarray) -> np.ndarray:
    return np.prod(Z[:, None, :] ** powers[None, :, :], axis=2)


def _forward(params, Z):
    acts = [Z]
    nl = len(params) // 2
    a = Z
    for layer in range(nl):
        pre = a @ params[2 * layer] + params[2 * layer + 1]
        a = np.tanh(pre) if layer < nl - 1 else pre
        acts.append(a)
    return acts, nl


def _loss_grad(params, Z, y, power: int = 2):
    """``(mean r^p)^(2/p)``: the mean squared error for ``p = 2``; larger ``p`` targets the worst samples."""
    acts, nl = _forward(params, Z)
    r = (acts[-1][:, 0] - y).astype(np.float64)
    mp = float(np.mean(r**power))
    loss = mp ** (2.0 / power)
    grads = [None] * len(params)
    scale = (2.0 / y.size) * (mp ** (2.0 / power - 1.0) if power != 2 and mp > 0 else 1.0)
    delta = (scale * r ** (power - 1))[:, None].astype(acts[-1].dtype)
    for layer in reversed(range(nl)):
        grads[2 * layer] = acts[layer].T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params[2 * layer].T) * (1.0 - acts[layer] ** 2)
    return loss, grads


def _init_network(sizes, rng):
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        params.append(rng.normal(0.0, np.sqrt(1.0 / a), size=(a, b)))
        params.append(np.zeros(b))
    return params


def _train_network(Z, y, cfg: FitConfig, rng) -> list:
    sizes = [Z.shape[1], *cfg.hidden, 1]
    params = _init_network(sizes, rng)
    # passes run in single precision; parameters are kept in double
    Z = Z.astype(np.float32)
    y = y.astype(np.float32)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = 0.9, 0.999
    for t in range(1, cfg.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = _loss_grad([p.astype(np.float32) for p in params], Z, y)
        if not np.isfinite(loss):
            raise SetCbfError(f"training diverged (loss {loss}); config {asdict(cfg)}")
        lr = cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * t / cfg.epochs))
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            params[i] = params[i] - lr * (m[i] / (1 - b1**t)) / (np.sqrt(v[i] / (1 - b2**t)) + 1e-8)
    if cfg.refine_iters:
        shapes = [p.shape for p in params]
        sizes_flat = [p.size for p in params]

        def unpack(theta):
            out, k = [], 0
            for s, n in zip(shapes, sizes_flat):
                out.append(theta[k:k + n].reshape(s))
                k += n
            return out

        def fun(theta):
            loss, grads = _loss_grad([p.astype(np.float32) for p in unpack(theta)], Z, y, cfg.loss_power)
            return float(loss), np.concatenate([g.ravel() for g in grads]).astype(np.float64)

        theta0 = np.concatenate([p.ravel() for p in params])
        res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                       options={"maxiter": cfg.refine_iters, "gtol": 1e-12, "ftol": 1e-15})
        if not np.isfinite(res.fun):
            raise SetCbfError(f"training diverged during refinement; config {asdict(cfg)}")
        params = unpack(res.x)
    return params


def fit(dataset: Dataset, config: FitConfig | None = None) -> ApproxCbf:
    """Fit a regressor and set ``epsilon = safety_factor * max validation error``."""
    cfg = config or FitConfig()
    n = len(dataset)
    if n < 2:
        raise ConfigurationError("dataset must contain at least two samples")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    val, train = perm[:n_val], perm[n_val:]
    shell = ApproxCbf("polynomial", [np.zeros(1)], dataset.domain, powers=np.zeros((1, dataset.X.shape[1])))
    Z = shell._normalize(dataset.X)
    y = dataset.gamma
    if cfg.model == "polynomial":
        powers = _poly_powers(Z.shape[1], cfg.degree)
        coef, *_ = np.linalg.lstsq(_poly_features(Z[train], powers), y[train], rcond=None)
        model = ApproxCbf("polynomial", [coef], dataset.domain, powers=powers)
    else:
        # the gauge's apex is measure-zero under sampling; anchor it explicitly
        n_anchor = int(round(cfg.origin_anchor * train.size))
        Zt = np.vstack([Z[train], np.repeat(shell._normalize(np.zeros((1, Z.shape[1]))), n_anchor, axis=0)])
        yt = np.concatenate([y[train], np.zeros(n_anchor)])
        params = _train_network(Zt, yt, cfg, rng)
        model = ApproxCbf("network", params, dataset.domain)
    err = np.abs(model.gamma_many(dataset.X[val]) - y[val])
    max_err = float(err.max())
    model.epsilon = cfg.safety_factor * max_err
    model.metadata = {
        "samples": n,
        "train": int(train.size),
        "validation": int(val.size),
        "max_validation_error": max_err,
        "dataset_seed": dataset.seed,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
    }
    log.info("fitted %s: max validation error %.3e, epsilon %.3e", cfg.model, max_err, model.epsilon)
    return model


def evaluate(hbar: ApproxCbf, x) -> tuple[float, dict]:
    """``hbar(x)`` and diagnostics (``extrapolated`` outside the training domain)."""
    return hbar.value(x), {"extrapolated": not hbar.in_domain(x)}


@dataclass
class ExactSurrogate:
    """Exact barrier of an H-polytope set with the learned-barrier interface."""

    cbf: object
    epsilon: float = 0.0
    metadata: dict = field(default_factory=dict)

    def value(self, x) -> float:
        return self.cbf.h(x)

    def gradient(self, x) -> np.ndarray:
        om = self.cbf.omega
        if not isinstance(om, HPolytope):
            raise ConfigurationError("exact surrogate needs an H-polytope safe set")
        vals = om.H @ np.asarray(x, dtype=float)
        if np.max(vals) <= 0:
            return np.zeros(om.dim)
        return -om.H[int(np.argmax(vals))]
