"""Slab-geometry transport benchmark: an isotropic pulse spreading under
advection, upwind dissipation and isotropic scattering.

The angular variable is expanded in L2-normalized Legendre polynomials
(moment method); space is a uniform cell grid with a centered-difference /
dissipation splitting of the upwind scheme. The resulting matrix ODE is

    dY/dt = -D_x Y A^T + D_xx Y |A|^T + Y G,

with Y holding one spatial cell per row and one moment per column. G is the
scattering relaxation diag(0, -1, ..., -1): the zeroth moment is conserved by
scattering while every higher moment decays. Under the step restriction
h = CFL * dx the explicit update is norm-nonincreasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lowrank import FactoredMatrix, orthonormalize_augment
from .rhs import RhsOperator

__all__ = [
    "PlanesourceProblem",
    "ScalarFluxField",
    "build_flux_matrix",
    "abs_flux_matrix",
    "build_stencils",
    "initial_condition",
    "scalar_flux",
    "cfl_step_size",
]

# Pulse of the standard benchmark: unit-mass Gaussian with sigma = 0.03.
PULSE_SIGMA = 0.03


def build_flux_matrix(n_moments: int) -> np.ndarray:
    """Advection coupling matrix of the normalized-Legendre moment expansion.

    Tridiagonal with zero diagonal (the integrand mu*p_l*p_l is odd) and
    off-diagonal entries (l+1)/sqrt((2l+1)(2l+3)) from the three-term
    recurrence of the Legendre polynomials.
    """
    if n_moments < 2:
        raise ValueError("need at least 2 moments")
    a = np.zeros((n_moments, n_moments))
    for ell in range(n_moments - 1):
        val = (ell + 1) / np.sqrt((2 * ell + 1) * (2 * ell + 3))
        a[ell, ell + 1] = val
        a[ell + 1, ell] = val
    return a


def abs_flux_matrix(a: np.ndarray) -> np.ndarray:
    """|A| = T |Lambda| T^T through the symmetric eigendecomposition."""
    a = np.asarray(a, dtype=float)
    if a.shape[0] != a.shape[1] or np.linalg.norm(a - a.T) > 1e-12 * max(1.0, np.linalg.norm(a)):
        raise ValueError("flux matrix must be symmetric")
    lam, t = np.linalg.eigh(a)
    return (t * np.abs(lam)) @ t.T


def build_stencils(nx: int, dx: float) -> tuple[sp.csr_array, sp.csr_array]:
    """Centered-difference and dissipation stencils of the upwind splitting.

    D_x has +-1/(2dx) off the diagonal; D_xx has 1/(2dx) off the diagonal and
    -1/dx on it. Boundary rows simply drop the out-of-domain neighbor
    (zero inflow), which is inert while the solution stays compactly supported.
    """
    if nx < 3:
        raise ValueError("need at least 3 cells")
    ones = np.ones(nx - 1)
    d_x = sp.diags_array([ones / (2 * dx), -ones / (2 * dx)], offsets=[1, -1])
    d_xx = sp.diags_array(
        [ones / (2 * dx), -np.ones(nx) / dx, ones / (2 * dx)], offsets=[1, 0, -1]
    )
    return sp.csr_array(d_x), sp.csr_array(d_xx)


@dataclass(frozen=True)
class PlanesourceProblem(RhsOperator):
    """Moment-method discretization of the slab-geometry transport benchmark."""

    nx: int = 200
    n_moments: int = 100
    domain: tuple[float, float] = (-5.0, 5.0)
    cfl: float = 0.99
    dx: float = field(init=False)
    x: np.ndarray = field(init=False)
    A: np.ndarray = field(init=False)
    A_abs: np.ndarray = field(init=False)
    G: np.ndarray = field(init=False)
    Dx: sp.csr_array = field(init=False)
    Dxx: sp.csr_array = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError("cfl must lie in (0, 1]")
        a_dom, b_dom = self.domain
        if b_dom <= a_dom:
            raise ValueError("empty domain")
        dx = (b_dom - a_dom) / self.nx
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "x", a_dom + dx * (np.arange(self.nx) + 0.5))
        a = build_flux_matrix(self.n_moments)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "A_abs", abs_flux_matrix(a))
        g = -np.ones(self.n_moments)
        g[0] = 0.0
        object.__setattr__(self, "G", np.diag(g))
        d_x, d_xx = build_stencils(self.nx, dx)
        object.__setattr__(self, "Dx", d_x)
        object.__setattr__(self, "Dxx", d_xx)

    @property
    def g_diag(self) -> np.ndarray:
        return np.diag(self.G)

    def dense_eval(self, t, y):
        return -(self.Dx @ y) @ self.A.T + (self.Dxx @ y) @ self.A_abs.T + y * self.g_diag

    def apply_corange(self, t, k, v):
        return (
            -(self.Dx @ k) @ (v.T @ (self.A @ v)).T
            + (self.Dxx @ k) @ (v.T @ (self.A_abs @ v)).T
            + k @ (v.T @ (v * self.g_diag[:, None]))
        )

    def apply_range(self, t, u, l):
        return (
            -(self.A @ l) @ ((self.Dx @ u).T @ u)
            + (self.A_abs @ l) @ ((self.Dxx @ u).T @ u)
            + (l * self.g_diag[:, None]) @ (u.T @ u)
        )

    def galerkin(self, t, u, s, v):
        return (
            -(u.T @ (self.Dx @ u)) @ s @ (v.T @ (self.A @ v)).T
            + (u.T @ (self.Dxx @ u)) @ s @ (v.T @ (self.A_abs @ v)).T
            + (u.T @ u) @ s @ (v.T @ (v * self.g_diag[:, None]))
        )

    def low_rank_factors(self, t, y):
        us = y.U @ y.S
        g = np.column_stack([-(self.Dx @ us), self.Dxx @ us, us])
        h = np.column_stack([self.A @ y.V, self.A_abs @ y.V, y.V * self.g_diag[:, None]])
        return g, h


@dataclass(frozen=True)
class ScalarFluxField:
    """Angle-integrated density per cell at one time."""

    values: np.ndarray
    time: float


def pulse_profile(x: np.ndarray) -> np.ndarray:
    """Initial particle density: unit-mass Gaussian of width PULSE_SIGMA."""
    sigma = PULSE_SIGMA
    return np.exp(-(x**2) / (2 * sigma**2)) / (sigma * np.sqrt(2 * np.pi))


def initial_condition(problem: PlanesourceProblem, r0: int = 1) -> FactoredMatrix:
    """Isotropic pulse as a rank-1 state; only the zeroth moment is populated.

    The zeroth-moment column is sqrt(2) * f(x_j) (cell-midpoint sampling; the
    sqrt(2) is the integral of the normalized zeroth Legendre polynomial).
    With r0 > 1 the state is padded with orthonormal complements carrying
    singular value 1e-14, for experiments that want a seeded starting rank.
    """
    profile = np.sqrt(2.0) * pulse_profile(problem.x)
    scale = float(np.linalg.norm(profile))
    u = (profile / scale)[:, None]
    v = np.zeros((problem.n_moments, 1))
    v[0, 0] = 1.0
    s = np.array([[scale]])
    if r0 <= 1:
        return FactoredMatrix(u, s, v)

    r0 = min(r0, problem.nx, problem.n_moments)
    # Deterministic complements: canonical directions orthogonalized against u.
    candidates = np.eye(problem.nx)[:, : 2 * r0]
    aug = orthonormalize_augment(u, candidates)
    u_ext = aug.B_hat[:, :r0]
    v_ext = np.zeros((problem.n_moments, r0))
    v_ext[0, 0] = 1.0
    for j in range(1, r0):
        v_ext[j, j] = 1.0
    s_ext = np.diag(np.concatenate([[scale], np.full(r0 - 1, 1e-14)]))
    return FactoredMatrix(u_ext, s_ext, v_ext)


def scalar_flux(y: FactoredMatrix, problem: PlanesourceProblem, time: float = 0.0) -> ScalarFluxField:
    """Scalar flux sqrt(2) * (first moment column), without densifying."""
    first_row_of_vt = y.V[0, :]
    values = np.sqrt(2.0) * (y.U @ (y.S @ first_row_of_vt))
    return ScalarFluxField(values=values, time=time)


def cfl_step_size(problem: PlanesourceProblem) -> float:
    """Stable explicit step h = CFL * dx."""
    return problem.cfl * problem.dx
