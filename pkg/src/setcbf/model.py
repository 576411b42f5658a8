"""Discrete-time LTI models and exact discretization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError


@dataclass(frozen=True, eq=False)
class LtiModel:
    """``x(k+1) = A x(k) + B u(k) + G w(k)``; ``G`` is optional."""

    A: np.ndarray
    B: np.ndarray
    G: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"A must be square, got {A.shape}")
        B = np.array(self.B, dtype=float).reshape(A.shape[0], -1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.G is not None:
            G = np.array(self.G, dtype=float).reshape(A.shape[0], -1)
            object.__setattr__(self, "G", G)
        for arr in (A, B, self.G):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return 0 if self.G is None else self.G.shape[1]

    def step(self, x, u, w=None) -> np.ndarray:
        x_next = self.A @ x + self.B @ u
        if w is not None:
            if self.G is None:
                raise ConfigurationError("model has no disturbance channel")
            x_next = x_next + self.G @ w
        return x_next

    def closed_loop(self, K) -> np.ndarray:
        return self.A + self.B @ np.atleast_2d(K)


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def exact_discretize(Ac, Bc, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold discretization via one exponential of ``[[Ac, Bc], [0, 0]] dt``."""
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    if Ac.ndim != 2 or Ac.shape[0] != Ac.shape[1]:
        raise ConfigurationError(f"continuous-time A must be square, got {Ac.shape}")
    n = Ac.shape[0]
    Bc = np.asarray(Bc, dtype=float).reshape(n, -1)
    if not dt > 0:
        raise ConfigurationError("sampling time must be positive")
    m = Bc.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = sla.expm(M * dt)
    return E[:n, :n], E[:n, n:]
