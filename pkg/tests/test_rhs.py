import numpy as np
import pytest
from scipy.linalg import expm

from dlra.lowrank import FactoredMatrix, orthonormalize_augment
from dlra.rhs import (
    SylvesterProblem,
    TangentialProblem,
    consistency_check,
    dense_reference_solve,
)
from dlra.odesolve import NumericalBlowupError
from conftest import ConstantRhs, ZeroRhs, random_factored, random_orthonormal


def make_sylvester(rng, m=12, n=9, with_source=True):
    a_m = rng.standard_normal((m, m))
    a_n = rng.standard_normal((n, n))
    mat_m = (a_m - a_m.T) / 4 - 0.3 * np.eye(m)
    mat_n = (a_n - a_n.T) / 4 - 0.2 * np.eye(n)
    c = None
    if with_source:
        c = FactoredMatrix(random_orthonormal(rng, m, 2), np.diag([0.3, 0.1]),
                           random_orthonormal(rng, n, 2))
    return SylvesterProblem(M=mat_m, N=mat_n, C=c)


class TestSylvesterProblem:
    def test_consistency_exact(self, rng):
        op = make_sylvester(rng)
        sample = random_factored(rng, 12, 9, 3)
        rep = consistency_check(op, 0.0, sample)
        assert rep.max_dev <= 1e-12

    def test_consistency_without_source(self, rng):
        op = make_sylvester(rng, with_source=False)
        rep = consistency_check(op, 0.0, random_factored(rng, 12, 9, 2))
        assert rep.max_dev <= 1e-12

    def test_low_rank_factors_width(self, rng):
        op = make_sylvester(rng)
        y = random_factored(rng, 12, 9, 3)
        g, h = op.low_rank_factors(0.0, y)
        assert g.shape == (12, 8) and h.shape == (9, 8)

    def test_closed_form_against_expm_kronecker(self, rng):
        # oracle: matrix exponential of the Kronecker-lifted linear system
        op = make_sylvester(rng, m=5, n=4)
        y0 = rng.standard_normal((5, 4))
        t = 0.7
        big = np.kron(np.eye(4), op.M) + np.kron(op.N, np.eye(5))
        lifted = expm(t * big) @ y0.reshape(-1, order="F")
        const = op.C.dense().reshape(-1, order="F")
        # integrate the affine part: y(t) = e^{tA} y0 + int_0^t e^{sA} c ds
        steps = 4000
        s_grid = np.linspace(0, t, steps + 1)
        integral = np.zeros_like(const)
        for s0, s1 in zip(s_grid[:-1], s_grid[1:]):
            mid = 0.5 * (s0 + s1)
            integral += (s1 - s0) * (expm(mid * big) @ const)
        expected = (lifted + integral).reshape(5, 4, order="F")
        assert np.allclose(op.closed_form(y0, t), expected, atol=5e-6)


class TestTangentialProblem:
    def test_exact_path_rank_and_consistency(self, rng):
        op = TangentialProblem.random(10, 8, 3, seed=7)
        y = op.exact(0.4)
        assert y.rank == 3
        y.validate(atol=1e-10)
        rep = consistency_check(op, 0.4, random_factored(rng, 10, 8, 3))
        assert rep.max_dev <= 1e-12

    def test_field_is_path_derivative(self):
        op = TangentialProblem.random(9, 7, 2, seed=1)
        t, eps = 0.3, 1e-6
        fd = (op.exact(t + eps).dense() - op.exact(t - eps).dense()) / (2 * eps)
        f = op.dense_eval(t, np.zeros((9, 7)))
        assert np.allclose(f, fd, atol=1e-8)

    def test_tangential_new_blocks_vanish(self, rng):
        # the field at a point of the path is tangential: the new-direction
        # block of its two-sided projection is zero
        op = TangentialProblem.random(12, 10, 3, seed=3)
        y0 = op.exact(0.0)
        f0 = op.dense_eval(0.0, y0.dense())
        u_hat = orthonormalize_augment(y0.U, rng.standard_normal((12, 3)))
        v_hat = orthonormalize_augment(y0.V, rng.standard_normal((10, 3)))
        block = u_hat.B_tilde.T @ f0 @ v_hat.B_tilde
        assert np.linalg.norm(block) <= 1e-10 * np.linalg.norm(f0)


class TestDenseReferenceSolve:
    def test_zero_field_identity(self, rng):
        y0 = rng.standard_normal((5, 4))
        out = dense_reference_solve(ZeroRhs(5, 4), y0, 0.0, 1.0, 0.25, "euler")
        assert np.array_equal(out, y0)

    def test_scalar_exponential_rk4(self):
        class Scalar(ConstantRhs):
            def dense_eval(self, t, y):
                return y

        out = dense_reference_solve(Scalar(np.zeros((1, 1))), np.array([[1.0]]),
                                    0.0, 1.0, 1e-2, "rk4")
        assert abs(out[0, 0] - np.e) < 1e-8

    def test_sylvester_matches_closed_form(self, rng):
        op = make_sylvester(rng, m=20, n=20)
        y0 = rng.standard_normal((20, 20))
        out = dense_reference_solve(op, y0, 0.0, 1.0, 1.0 / 256, "rk4")
        assert np.linalg.norm(out - op.closed_form(y0, 1.0)) < 1e-6

    def test_rk4_order_by_step_halving(self, rng):
        op = make_sylvester(rng, m=6, n=5, with_source=False)
        y0 = rng.standard_normal((6, 5))
        ref = op.closed_form(y0, 1.0)
        errs = [np.linalg.norm(dense_reference_solve(op, y0, 0.0, 1.0, h, "rk4") - ref)
                for h in (1 / 8, 1 / 16, 1 / 32)]
        slopes = np.diff(np.log(errs)) / np.diff(np.log([1 / 8, 1 / 16, 1 / 32]))
        assert np.mean(slopes) >= 3.8

    def test_indivisible_interval_raises(self, rng):
        with pytest.raises(ValueError):
            dense_reference_solve(ZeroRhs(3, 3), np.eye(3), 0.0, 1.0, 0.3, "euler")

    def test_blowup_error_names_step(self):
        class Unstable(ConstantRhs):
            def dense_eval(self, t, y):
                return y * 1e160

        with pytest.raises(NumericalBlowupError):
            dense_reference_solve(Unstable(np.zeros((2, 2))), np.ones((2, 2)),
                                  0.0, 1.0, 0.25, "euler")


def test_consistency_check_constant_field(rng):
    f0 = rng.standard_normal((8, 6))
    rep = consistency_check(ConstantRhs(f0), 0.0, random_factored(rng, 8, 6, 2))
    assert rep.max_dev <= 1e-12
