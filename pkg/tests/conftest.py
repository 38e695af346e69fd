import numpy as np
import pytest

from dlra.lowrank import FactoredMatrix
from dlra.rhs import RhsOperator


def random_orthonormal(rng, m, r):
    return np.linalg.qr(rng.standard_normal((m, r)))[0]


def random_factored(rng, m, n, r, singular_values=None):
    """Seeded random factored matrix with orthonormal bases."""
    u = random_orthonormal(rng, m, r)
    v = random_orthonormal(rng, n, r)
    if singular_values is None:
        s = rng.standard_normal((r, r))
    else:
        s = np.diag(np.asarray(singular_values, dtype=float))
    return FactoredMatrix(u, s, v)


class ConstantRhs(RhsOperator):
    """F(t, Y) = F0 for a fixed dense matrix; test double with exact paths."""

    def __init__(self, f0):
        self.f0 = np.asarray(f0, dtype=float)

    def apply_corange(self, t, k, v):
        return self.f0 @ v

    def apply_range(self, t, u, l):
        return self.f0.T @ u

    def galerkin(self, t, u, s, v):
        return u.T @ (self.f0 @ v)

    def dense_eval(self, t, y):
        return self.f0.copy()


class ZeroRhs(ConstantRhs):
    def __init__(self, m, n):
        super().__init__(np.zeros((m, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
