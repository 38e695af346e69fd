import numpy as np
import pytest

from dlra.integrators import StepConfig, integrate
from dlra.planesource import (
    PlanesourceProblem,
    abs_flux_matrix,
    build_flux_matrix,
    build_stencils,
    cfl_step_size,
    initial_condition,
    pulse_profile,
    scalar_flux,
)
from dlra.rhs import consistency_check
from conftest import random_factored


def normalized_legendre_table(n_moments, nodes):
    """L2-normalized Legendre polynomials evaluated at quadrature nodes."""
    table = np.zeros((n_moments, nodes.size))
    for ell in range(n_moments):
        coeffs = np.zeros(ell + 1)
        coeffs[ell] = 1.0
        vals = np.polynomial.legendre.legval(nodes, coeffs)
        table[ell] = np.sqrt((2 * ell + 1) / 2.0) * vals
    return table


class TestFluxMatrix:
    def test_two_moment_entry(self):
        a = build_flux_matrix(2)
        assert np.isclose(a[0, 1], 1 / np.sqrt(3), atol=1e-14)
        assert np.isclose(a[1, 0], 1 / np.sqrt(3), atol=1e-14)

    def test_diagonal_zero(self):
        for n in (2, 5, 11):
            assert np.all(np.diag(build_flux_matrix(n)) == 0.0)

    def test_matches_gauss_legendre_quadrature(self):
        # oracle: 16-point quadrature of the defining integral mu p_l p_k
        n = 5
        nodes, weights = np.polynomial.legendre.leggauss(16)
        table = normalized_legendre_table(n, nodes)
        oracle = np.einsum("q,iq,jq->ij", weights * nodes, table, table)
        assert np.allclose(build_flux_matrix(n), oracle, atol=1e-13)

    def test_rejects_tiny(self):
        with pytest.raises(ValueError):
            build_flux_matrix(1)


class TestAbsFluxMatrix:
    def test_two_by_two(self):
        c = 0.7
        a = np.array([[0.0, c], [c, 0.0]])
        assert np.allclose(abs_flux_matrix(a), c * np.eye(2), atol=1e-14)

    def test_psd_input_unchanged(self, rng):
        b = rng.standard_normal((5, 5))
        a = b @ b.T
        assert np.allclose(abs_flux_matrix(a), a, atol=1e-12)

    def test_square_identity(self):
        a = build_flux_matrix(10)
        a_abs = abs_flux_matrix(a)
        assert np.allclose(a_abs @ a_abs, a @ a, atol=1e-10)
        assert np.allclose(a_abs, a_abs.T, atol=1e-13)
        assert np.all(np.linalg.eigvalsh(a_abs) >= -1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            abs_flux_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestStencils:
    def test_constant_field_interior(self):
        d_x, d_xx = build_stencils(10, 0.5)
        ones = np.ones(10)
        assert np.allclose((d_x @ ones)[1:-1], 0.0, atol=1e-14)
        assert np.allclose((d_xx @ ones)[1:-1], 0.0, atol=1e-14)

    def test_linear_field_unit_slope(self):
        nx, dx = 12, 0.25
        d_x, _ = build_stencils(nx, dx)
        x = dx * np.arange(nx)
        assert np.allclose((d_x @ x)[1:-1], 1.0, atol=1e-12)

    def test_entries(self):
        d_x, d_xx = build_stencils(5, 0.1)
        d_x = d_x.toarray()
        d_xx = d_xx.toarray()
        assert np.isclose(d_x[2, 3], 5.0) and np.isclose(d_x[2, 1], -5.0)
        assert np.isclose(d_xx[2, 3], 5.0) and np.isclose(d_xx[2, 1], 5.0)
        assert np.isclose(d_xx[2, 2], -10.0)


class TestProblemInvariants:
    def test_flux_matrix_invariants(self):
        prob = PlanesourceProblem(nx=50, n_moments=12)
        assert np.allclose(prob.A, prob.A.T, atol=1e-14)
        # scattering matrix: exactly one zero diagonal entry, at the first index
        g = np.diag(prob.G)
        assert g[0] == 0.0
        assert np.all(g[1:] != 0.0)

    def test_abs_eigendecomposition_action(self, rng):
        prob = PlanesourceProblem(nx=40, n_moments=10)
        lam, t_mat = np.linalg.eigh(prob.A)
        for _ in range(3):
            v = rng.standard_normal(10)
            assert np.allclose(prob.A_abs @ v, t_mat @ (np.abs(lam) * (t_mat.T @ v)),
                               atol=1e-10)

    def test_consistency_check(self, rng):
        prob = PlanesourceProblem(nx=40, n_moments=12)
        rep = consistency_check(prob, 0.0, random_factored(rng, 40, 12, 3))
        assert rep.max_dev <= 1e-10

    def test_linearity_dense(self, rng):
        prob = PlanesourceProblem(nx=30, n_moments=8)
        y = rng.standard_normal((30, 8))
        z = rng.standard_normal((30, 8))
        lhs = prob.dense_eval(0.0, 2.0 * y + 3.0 * z)
        rhs = 2.0 * prob.dense_eval(0.0, y) + 3.0 * prob.dense_eval(0.0, z)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_zero_maps_to_zero(self):
        prob = PlanesourceProblem(nx=30, n_moments=8)
        assert np.all(prob.dense_eval(0.0, np.zeros((30, 8))) == 0.0)

    def test_two_moment_single_cell_euler_update_by_hand(self):
        # one explicit step couples the isotropic moment into the first
        # moment through the off-diagonal advection entry 1/sqrt(3)
        prob = PlanesourceProblem(nx=5, n_moments=2, domain=(0.0, 1.0))
        y0 = np.zeros((5, 2))
        y0[2, 0] = 1.0
        h = 0.1
        y1 = y0 + h * prob.dense_eval(0.0, y0)
        a01 = 1 / np.sqrt(3)
        dx = prob.dx
        # advection: outward streaming, so the current is negative on the left
        assert np.isclose(y1[1, 1], -h * a01 / (2 * dx), atol=1e-14)
        assert np.isclose(y1[3, 1], h * a01 / (2 * dx), atol=1e-14)
        # dissipation: moment-0 spreads with the |A| stencil
        a_abs_00 = prob.A_abs[0, 0]
        assert np.isclose(y1[2, 0], 1.0 - h * a_abs_00 / dx, atol=1e-14)
        assert np.isclose(y1[1, 0], h * a_abs_00 / (2 * dx), atol=1e-14)

    def test_cfl_validation(self):
        with pytest.raises(ValueError):
            PlanesourceProblem(nx=30, n_moments=8, cfl=1.5)


class TestInitialCondition:
    def test_rank_one(self):
        prob = PlanesourceProblem(nx=80, n_moments=16)
        y0 = initial_condition(prob)
        assert y0.rank == 1
        y0.validate()

    def test_peak_value_matches_formula(self):
        prob = PlanesourceProblem(nx=80, n_moments=16)
        y0 = initial_condition(prob)
        dense = y0.dense()
        j_peak = int(np.argmax(dense[:, 0]))
        x_peak = prob.x[j_peak]
        expected = np.sqrt(2.0) * pulse_profile(np.array([x_peak]))[0]
        assert np.isclose(dense[j_peak, 0], expected, rtol=1e-12)

    def test_higher_moment_columns_zero(self):
        prob = PlanesourceProblem(nx=80, n_moments=16)
        dense = initial_condition(prob).dense()
        assert np.all(dense[:, 1:] == 0.0)

    def test_seeded_rank(self):
        prob = PlanesourceProblem(nx=80, n_moments=16)
        y0 = initial_condition(prob, r0=5)
        assert y0.rank == 5
        y0.validate(atol=1e-10)
        # padding directions carry negligible weight
        sig = np.linalg.svd(y0.S, compute_uv=False)
        assert np.all(sig[1:] <= 1e-13)


class TestScalarFlux:
    def test_recovers_pulse(self):
        prob = PlanesourceProblem(nx=80, n_moments=16)
        y0 = initial_condition(prob)
        flux = scalar_flux(y0, prob)
        expected = np.sqrt(2.0) * y0.dense()[:, 0]
        assert np.allclose(flux.values, expected, atol=1e-12)

    def test_zero_state(self):
        prob = PlanesourceProblem(nx=30, n_moments=8)
        from dlra.lowrank import FactoredMatrix
        y = FactoredMatrix(np.eye(30, 1), np.zeros((1, 1)), np.eye(8, 1))
        assert np.all(scalar_flux(y, prob).values == 0.0)

    def test_matches_dense_first_column(self, rng):
        prob = PlanesourceProblem(nx=30, n_moments=8)
        y = random_factored(rng, 30, 8, 3)
        assert np.allclose(scalar_flux(y, prob).values,
                           np.sqrt(2.0) * y.dense()[:, 0], atol=1e-12)


class TestCflStepSize:
    def test_values(self):
        prob = PlanesourceProblem(nx=1000, n_moments=4, cfl=0.99)
        assert np.isclose(cfl_step_size(prob), 0.99 * 0.01)
        prob = PlanesourceProblem(nx=200, n_moments=4, cfl=1.0)
        assert np.isclose(cfl_step_size(prob), 0.05)
        prob = PlanesourceProblem(nx=200, n_moments=4, cfl=0.99)
        assert np.isclose(cfl_step_size(prob), 0.0495)


@pytest.fixture(scope="module")
def desk_run():
    prob = PlanesourceProblem(nx=100, n_moments=30)
    y0 = initial_condition(prob)
    cfg = StepConfig(theta_bar=1e-2, theta_mode="relative", c_reject=1.0,
                     substep_method="euler")
    traj = integrate(prob, y0, 0.0, 1.0, cfl_step_size(prob), cfg,
                     stepper="parallel", snapshot_times=(0.5, 1.0))
    return prob, traj


class TestRunProperties:
    def test_norm_nonincrease(self, desk_run):
        _, traj = desk_run
        norms = traj.norms
        assert np.all(np.diff(norms) <= 1e-12 * norms[0])

    def test_even_symmetry_of_flux(self, desk_run):
        prob, traj = desk_run
        for t_req, (_, y) in traj.snapshots.items():
            phi = scalar_flux(y, prob).values
            assert np.linalg.norm(phi - phi[::-1]) <= 1e-8 * np.linalg.norm(phi)
