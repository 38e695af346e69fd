"""Right-hand-side operators F(t, Y) with the structured evaluations the integrators use.

Every problem exposes corange/range/Galerkin contractions so the integrators
never form a dense m x n matrix; `dense_eval` exists on each problem but is an
oracle for tests only. Implementations are immutable after construction and
safe to call from the concurrent substep workers.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .lowrank import FactoredMatrix
from .odesolve import OdeMethod, solve_matrix_ode

__all__ = [
    "RhsOperator",
    "SylvesterProblem",
    "TangentialProblem",
    "ConsistencyReport",
    "dense_reference_solve",
    "consistency_check",
]


class RhsOperator(ABC):
    """Matrix vector field F(t, Y) evaluated through low-rank contractions."""

    @abstractmethod
    def apply_corange(self, t: float, k: np.ndarray, v: np.ndarray) -> np.ndarray:
        """F(t, K V^T) V, for K (m x q) and V (n x q)."""

    @abstractmethod
    def apply_range(self, t: float, u: np.ndarray, l: np.ndarray) -> np.ndarray:
        """F(t, U L^T)^T U, for U (m x p) and L (n x p)."""

    def galerkin(self, t: float, u: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
        """U^T F(t, U S V^T) V, for U (m x k), S (k x k'), V (n x k')."""
        return u.T @ self.apply_corange(t, u @ s, v)

    def low_rank_factors(self, t: float, y: FactoredMatrix):
        """Optional factorization F(t, dense(y)) = G H^T with slim G, H; None if unavailable."""
        return None

    @abstractmethod
    def dense_eval(self, t: float, y: np.ndarray) -> np.ndarray:
        """Full F(t, Y) on a dense Y. Oracle/testing path; integrators never call it."""

    def lipschitz_hint(self):
        return None


@dataclass(frozen=True)
class SylvesterProblem(RhsOperator):
    """F(t, Y) = M Y + Y N^T + C with a constant low-rank (or zero) source C.

    A smooth, Lipschitz, autonomous test problem whose full solution is
    available in closed form through the matrix exponential.
    """

    M: np.ndarray
    N: np.ndarray
    C: FactoredMatrix | None = None

    def apply_corange(self, t, k, v):
        out = self.M @ k @ (v.T @ v) + k @ (v.T @ (self.N.T @ v))
        if self.C is not None:
            out = out + self.C.U @ (self.C.S @ (self.C.V.T @ v))
        return out

    def apply_range(self, t, u, l):
        out = l @ (u.T @ (self.M.T @ u)) + self.N @ l @ (u.T @ u)
        if self.C is not None:
            out = out + self.C.V @ (self.C.S.T @ (self.C.U.T @ u))
        return out

    def galerkin(self, t, u, s, v):
        out = (u.T @ (self.M @ u)) @ s @ (v.T @ v) + (u.T @ u) @ s @ (v.T @ (self.N.T @ v))
        if self.C is not None:
            out = out + (u.T @ self.C.U) @ self.C.S @ (self.C.V.T @ v)
        return out

    def low_rank_factors(self, t, y):
        g = [self.M @ y.U @ y.S, y.U @ y.S]
        h = [y.V, self.N @ y.V]
        if self.C is not None:
            g.append(self.C.U @ self.C.S)
            h.append(self.C.V)
        return np.column_stack(g), np.column_stack(h)

    def dense_eval(self, t, y):
        out = self.M @ y + y @ self.N.T
        if self.C is not None:
            out = out + self.C.dense()
        return out

    def lipschitz_hint(self):
        return float(np.linalg.norm(self.M, 2) + np.linalg.norm(self.N, 2))

    def closed_form(self, y0: np.ndarray, t: float) -> np.ndarray:
        """exp(tM) (Y0 + X) exp(tN^T) - X, where X solves M X + X N^T = C."""
        em = expm(t * self.M)
        en = expm(t * self.N)
        if self.C is None:
            return em @ y0 @ en.T
        from scipy.linalg import solve_sylvester

        x = solve_sylvester(self.M, self.N.T, self.C.dense())
        return em @ (y0 + x) @ en.T - x


class TangentialProblem(RhsOperator):
    """Solution-independent field F(t, Y) = dA/dt for a prescribed rank-r path.

    The path is A(t) = exp(t W_u) U0 diag(d) e^t V0^T exp(t W_v)^T with skew
    W_u, W_v, so dA/dt = W_u A + A W_v^T + A stays exactly tangential to the
    rank-r manifold along A(t), and the exact solution is known in closed form.
    """

    def __init__(self, w_u: np.ndarray, w_v: np.ndarray, u0: np.ndarray,
                 d: np.ndarray, v0: np.ndarray):
        w_u = np.asarray(w_u, dtype=float)
        w_v = np.asarray(w_v, dtype=float)
        if np.linalg.norm(w_u + w_u.T) > 1e-12 or np.linalg.norm(w_v + w_v.T) > 1e-12:
            raise ValueError("w_u and w_v must be skew-symmetric")
        self.w_u = w_u
        self.w_v = w_v
        self.u0 = np.asarray(u0, dtype=float)
        self.d = np.asarray(d, dtype=float)
        self.v0 = np.asarray(v0, dtype=float)
        self._factors = lru_cache(maxsize=64)(self._factors_uncached)

    @classmethod
    def random(cls, m: int, n: int, r: int, seed: int = 0,
               singular_values: np.ndarray | None = None,
               rotation_scale: float = 0.5) -> "TangentialProblem":
        rng = np.random.default_rng(seed)
        a_u = rng.standard_normal((m, m))
        a_v = rng.standard_normal((n, n))
        w_u = rotation_scale * (a_u - a_u.T) / np.sqrt(m)
        w_v = rotation_scale * (a_v - a_v.T) / np.sqrt(n)
        u0 = np.linalg.qr(rng.standard_normal((m, r)))[0]
        v0 = np.linalg.qr(rng.standard_normal((n, r)))[0]
        if singular_values is None:
            singular_values = 2.0 ** -np.arange(r)
        return cls(w_u, w_v, u0, np.asarray(singular_values, dtype=float), v0)

    def _factors_uncached(self, t: float):
        u = expm(t * self.w_u) @ self.u0
        v = expm(t * self.w_v) @ self.v0
        s = np.exp(t) * np.diag(self.d)
        return u, s, v

    def exact(self, t: float) -> FactoredMatrix:
        u, s, v = self._factors(t)
        return FactoredMatrix(u, s, v)

    def _derivative_factors(self, t: float):
        # dA/dt = (W_u U) S V^T + U S (W_v V)^T + U dS/dt V^T with dS/dt = S.
        u, s, v = self._factors(t)
        g = np.column_stack([self.w_u @ u @ s, u @ s, u @ s])
        h = np.column_stack([v, self.w_v @ v, v])
        return g, h

    def apply_corange(self, t, k, v):
        g, h = self._derivative_factors(t)
        return g @ (h.T @ v)

    def apply_range(self, t, u, l):
        g, h = self._derivative_factors(t)
        return h @ (g.T @ u)

    def galerkin(self, t, u, s, v):
        g, h = self._derivative_factors(t)
        return (u.T @ g) @ (h.T @ v)

    def low_rank_factors(self, t, y):
        return self._derivative_factors(t)

    def dense_eval(self, t, y):
        g, h = self._derivative_factors(t)
        return g @ h.T

    def lipschitz_hint(self):
        return 0.0


def dense_reference_solve(
    op: RhsOperator,
    y0: np.ndarray,
    t0: float,
    t1: float,
    h_sub: float,
    method: str = "rk4",
) -> np.ndarray:
    """Brute-force full-rank reference: step the unprojected ODE on dense Y."""
    if h_sub <= 0:
        raise ValueError("h_sub must be positive")
    span = t1 - t0
    n = max(1, round(span / h_sub)) if span > 0 else 0
    if span == 0:
        return np.array(y0, dtype=float, copy=True)
    if abs(n * h_sub - span) > 1e-9 * max(abs(span), 1.0):
        raise ValueError(f"h_sub = {h_sub} does not divide the interval length {span}")
    return solve_matrix_ode(op.dense_eval, y0, t0, t1, OdeMethod(method, n))


@dataclass(frozen=True)
class ConsistencyReport:
    corange_dev: float
    range_dev: float
    galerkin_dev: float
    factors_dev: float | None = None

    @property
    def max_dev(self) -> float:
        devs = [self.corange_dev, self.range_dev, self.galerkin_dev]
        if self.factors_dev is not None:
            devs.append(self.factors_dev)
        return max(devs)


def consistency_check(op: RhsOperator, t: float, sample: FactoredMatrix) -> ConsistencyReport:
    """Compare the structured evaluations against the dense path on one sample.

    Returns relative deviations; the scale is max(||F_dense||_F, 1e-300) so a
    zero field reports zero deviation.
    """
    u, s, v = sample.U, sample.S, sample.V
    f_dense = op.dense_eval(t, sample.dense())
    scale = max(float(np.linalg.norm(f_dense)), 1e-300)
    dev_k = np.linalg.norm(op.apply_corange(t, u @ s, v) - f_dense @ v) / scale
    dev_l = np.linalg.norm(op.apply_range(t, u, v @ s.T) - f_dense.T @ u) / scale
    dev_s = np.linalg.norm(op.galerkin(t, u, s, v) - u.T @ f_dense @ v) / scale
    dev_f = None
    fac = op.low_rank_factors(t, sample)
    if fac is not None:
        g, h = fac
        dev_f = float(np.linalg.norm(g @ h.T - f_dense) / scale)
    return ConsistencyReport(float(dev_k), float(dev_l), float(dev_s), dev_f)
