"""Explicit one-step solvers for the small matrix ODEs inside each integrator step."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["OdeMethod", "NumericalBlowupError", "solve_matrix_ode"]

METHODS = ("euler", "rk4")


class NumericalBlowupError(RuntimeError):
    """Raised when a time-stepping stage produces non-finite values."""

    def __init__(self, message: str, step: int, stage: int | None = None):
        super().__init__(message)
        self.step = step
        self.stage = stage


@dataclass(frozen=True)
class OdeMethod:
    kind: str = "rk4"
    substep_count: int = 1

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ValueError(f"unknown method {self.kind!r}, expected one of {METHODS}")
        if self.substep_count < 1:
            raise ValueError("substep_count must be >= 1")


def _check_finite(z: np.ndarray, step: int, stage: int) -> None:
    if not np.all(np.isfinite(z)):
        raise NumericalBlowupError(
            f"non-finite values at substep {step}, stage {stage}", step, stage
        )


def solve_matrix_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    z0: np.ndarray,
    t0: float,
    t1: float,
    method: OdeMethod,
) -> np.ndarray:
    """Integrate dZ/dt = rhs(t, Z) from t0 to t1 with fixed substeps.

    euler: Z <- Z + d*rhs(t, Z); rk4: the classical 4-stage scheme. The substep
    size is d = (t1 - t0)/substep_count. Deterministic for identical inputs.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    z = np.array(z0, dtype=float, copy=True)
    delta = (t1 - t0) / method.substep_count
    for k in range(method.substep_count):
        t = t0 + k * delta
        if method.kind == "euler":
            z = z + delta * rhs(t, z)
            _check_finite(z, k, 1)
        else:
            k1 = rhs(t, z)
            _check_finite(k1, k, 1)
            k2 = rhs(t + 0.5 * delta, z + (0.5 * delta) * k1)
            _check_finite(k2, k, 2)
            k3 = rhs(t + 0.5 * delta, z + (0.5 * delta) * k2)
            _check_finite(k3, k, 3)
            k4 = rhs(t + delta, z + delta * k3)
            _check_finite(k4, k, 4)
            z = z + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check_finite(z, k, 5)
    return z
