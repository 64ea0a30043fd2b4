import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from factor_state.services.factors import FactorState, ema_update
from linalg.exceptions import DimError, SingularFactor
from linalg.services.decompositions import (
    random_orthogonal,
    random_spd,
    sym_eig,
    sym_matrix,
)
from linalg.services.kronecker import kron_basis, unvec, vec
from optimizers.services.blocks import OptimizerConfig, make_block
from optimizers.services.updates import (
    adam_update,
    eshampoo_update,
    graft_rescale,
    shampoo2_trace_update,
    shampoo_update,
)

from .exceptions import NonPositiveScale, SizeGuard
from .services.full_matrix import (
    FullMatrixState,
    extreme_eig_bounds,
    frobenius_residuals,
    full_matrix_update,
    full_update,
    idealized_updates,
    norm_bounds,
    optimal_correction,
    partial_traces,
    shampoo_kron_preconditioner,
)


def sampled_covariance(dim, samples, rng):
    state = FullMatrixState.zeros(dim, "adagrad_sum")
    for _ in range(samples):
        full_update(state, rng.standard_normal(dim))
    return state.C / samples


def block_with_factors(cfg, L, R):
    m, n = len(L), len(R)
    block = make_block("w", np.zeros((m, n)), cfg)
    for name, stat in (("left", L), ("right", R)):
        state = FactorState.initial(len(stat))
        state.stat = sym_matrix(stat)
        state.basis, state.basis_eigenvalues = sym_eig(stat)
        state.eig_count = 1
        setattr(block, name, state)
    return block


class FullUpdateTests(SimpleTestCase):
    def test_zero_gradient_scales_ema(self):
        state = FullMatrixState(3, np.eye(3), "adam_ema", beta2=0.9)
        full_update(state, np.zeros(3))
        assert_allclose(state.C, 0.9 * np.eye(3))

    def test_single_sample_sum_is_rank_one(self):
        g = np.array([1.0, -2.0, 0.5])
        state = full_update(FullMatrixState.zeros(3, "adagrad_sum"), g)
        assert_allclose(state.C, np.outer(g, g))
        self.assertEqual(np.linalg.matrix_rank(state.C), 1)

    def test_orthonormal_pair(self):
        q = random_orthogonal(4, np.random.default_rng(0))
        state = FullMatrixState.zeros(4, "adagrad_sum")
        full_update(state, q[:, 0])
        full_update(state, q[:, 1])
        assert_allclose(
            sym_eig(state.C).values, [1.0, 1.0, 0.0, 0.0], atol=1e-12
        )

    def test_dimension_mismatch(self):
        with self.assertRaises(DimError):
            full_update(FullMatrixState.zeros(3), np.ones(4))

    def test_size_guard(self):
        with self.assertRaises(SizeGuard):
            FullMatrixState.zeros(5000)


class OptimalCorrectionTests(SimpleTestCase):
    def test_exact_eigenbasis_recovers_eigenvalues(self):
        C = random_spd(6, np.random.default_rng(1))
        eig = sym_eig(C)
        D = optimal_correction(C, eig.basis)
        assert_allclose(D, eig.values, atol=1e-12)
        residual = np.linalg.norm(C - (eig.basis * D) @ eig.basis.T)
        self.assertLessEqual(residual, 1e-10)

    def test_identity_basis_reads_diagonal(self):
        C = random_spd(5, np.random.default_rng(2))
        assert_allclose(optimal_correction(C, np.eye(5)), np.diag(C))

    def test_perturbations_never_improve_residual(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            C = random_spd(8, rng)
            Q = random_orthogonal(8, rng)
            D = optimal_correction(C, Q)
            best = np.linalg.norm(C - (Q * D) @ Q.T)
            deltas = rng.standard_normal((1000, 8)) * rng.uniform(
                1e-6, 1.0, (1000, 1)
            )
            for delta in deltas:
                residual = np.linalg.norm(C - (Q * (D + delta)) @ Q.T)
                self.assertLessEqual(best, residual + 1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimError):
            optimal_correction(np.eye(3), np.eye(2))


class ShampooKronPreconditionerTests(SimpleTestCase):
    def test_identity_factors(self):
        for squared in (False, True):
            assert_allclose(
                shampoo_kron_preconditioner(
                    np.eye(2), np.eye(3), squared=squared
                ),
                np.eye(6),
                atol=1e-15,
            )

    def test_scalar_factors(self):
        assert_allclose(
            shampoo_kron_preconditioner([[4.0]], [[9.0]]), [[6.0]]
        )

    def test_rank_one_trace_scaling_is_exact(self):
        rng = np.random.default_rng(4)
        for m, n in ((2, 3), (4, 4), (6, 5), (1, 6)):
            a, b = rng.standard_normal(m), rng.standard_normal(n)
            G = np.outer(a, b)
            left = FactorState.initial(m)
            right = FactorState.initial(n)
            ema_update(left, G @ G.T, 0.0)
            ema_update(right, G.T @ G, 0.0)
            C = shampoo_kron_preconditioner(
                left.stat, right.stat, squared=True, trace_scaled=True
            )
            g = vec(G)
            self.assertLessEqual(np.linalg.norm(C - np.outer(g, g)), 1e-10)

    def test_size_guard(self):
        with self.assertRaises(SizeGuard):
            shampoo_kron_preconditioner(np.eye(65), np.eye(65))

    def test_trace_scaling_needs_positive_trace(self):
        with self.assertRaises(NonPositiveScale):
            shampoo_kron_preconditioner(
                np.zeros((2, 2)), np.eye(2), trace_scaled=True
            )


class BoundTests(SimpleTestCase):
    def test_constant_scaling_collapses_bounds(self):
        G = np.arange(6.0).reshape(2, 3)
        lower, upper = norm_bounds(np.full((2, 3), 4.0), G, 0.5)
        self.assertAlmostEqual(lower, np.linalg.norm(G) / 2)
        self.assertAlmostEqual(upper, lower)

    def test_lower_never_exceeds_upper(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            D = rng.uniform(0.01, 10.0, (3, 4))
            lower, upper = norm_bounds(D, rng.standard_normal((3, 4)), 0.3)
            self.assertLessEqual(lower, upper)

    def test_eshampoo_update_lies_inside(self):
        rng = np.random.default_rng(6)
        cfg = OptimizerConfig(
            "eshampoo", beta2=0.8, epsilon=0.0, max_preconditioner_dim=1
        )
        block = block_with_factors(cfg, random_spd(4, rng), random_spd(5, rng))
        block.correction = rng.uniform(0.1, 2.0, (4, 5))
        G = rng.standard_normal((4, 5))
        U = eshampoo_update(block, G, cfg)
        lower, upper = norm_bounds(block.correction, G, 0.5)
        self.assertLessEqual(lower, np.linalg.norm(U) * (1 + 1e-12))
        self.assertLessEqual(np.linalg.norm(U), upper * (1 + 1e-12))

    def test_non_positive_scaling(self):
        with self.assertRaises(NonPositiveScale):
            norm_bounds([[1.0, 0.0]], [[1.0, 1.0]], 0.5)

    def test_extreme_eigenvalues(self):
        G = np.array([[3.0], [4.0]])
        lower, upper = extreme_eig_bounds(np.eye(2), G, 0.5)
        self.assertAlmostEqual(lower, 5.0)
        self.assertAlmostEqual(upper, 5.0)
        lower, upper = extreme_eig_bounds(np.diag([1.0, 4.0]), G, 0.5)
        self.assertAlmostEqual(lower, 2.5)
        self.assertAlmostEqual(upper, 5.0)

    def test_singular_covariance(self):
        with self.assertRaises(SingularFactor):
            extreme_eig_bounds(np.diag([1.0, 0.0]), np.ones((2, 1)), 1)

    def test_iid_equality_case(self):
        m = n = 8
        sigma = 0.7
        C = sigma**2 * np.eye(m * n)
        G = np.random.default_rng(7).standard_normal((m, n))
        updates = idealized_updates(C, G, 0.5)
        norm = np.linalg.norm(G)
        for U in (updates.adam, updates.eshampoo, updates.full_matrix):
            self.assertAlmostEqual(
                np.linalg.norm(U) / (norm / sigma), 1.0, delta=1e-9
            )
        shampoo = (m * n) ** -0.25 / sigma * norm
        self.assertAlmostEqual(
            np.linalg.norm(updates.shampoo) / shampoo, 1.0, delta=1e-9
        )
        lower, upper = extreme_eig_bounds(C, G, 0.5)
        self.assertLess(np.linalg.norm(updates.shampoo), lower)

    def test_idealized_norms_inside_extreme_bounds(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            m, n = rng.integers(2, 5, size=2)
            C = sampled_covariance(m * n, 4 * m * n, rng)
            G = rng.standard_normal((m, n))
            lower, upper = extreme_eig_bounds(C, G, 0.5)
            updates = idealized_updates(C, G, 0.5)
            for U in (updates.adam, updates.eshampoo, updates.full_matrix):
                norm = np.linalg.norm(U)
                self.assertLessEqual(lower, norm * (1 + 1e-9))
                self.assertLessEqual(norm, upper * (1 + 1e-9))


class ResidualTests(SimpleTestCase):
    def test_kronecker_statistic_is_matched_by_trace_scaling(self):
        rng = np.random.default_rng(9)
        a, b = rng.standard_normal(3), rng.standard_normal(4)
        g = vec(np.outer(a, b))
        C = np.outer(g, g)
        L, R = partial_traces(C, 3, 4)
        Q_L, Q_R = sym_eig(L).basis, sym_eig(R).basis
        D = unvec(optimal_correction(C, kron_basis(Q_L, Q_R)), (3, 4))
        report = frobenius_residuals(C, L, R, Q_L, Q_R, D)
        self.assertLessEqual(report.shampoo2_trace, 1e-10)

    def test_diagonal_statistic_with_identity_basis(self):
        C = np.diag(np.arange(1.0, 7.0))
        D = unvec(np.diag(C), (2, 3))
        report = frobenius_residuals(
            C, np.eye(2), np.eye(3), np.eye(2), np.eye(3), D
        )
        self.assertEqual(report.corrected, 0.0)

    def test_corrected_never_worse_than_shampoo(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            m, n = rng.integers(2, 6, size=2)
            C = sampled_covariance(m * n, 3 * m * n, rng)
            L, R = partial_traces(C, m, n)
            Q_L, Q_R = sym_eig(L).basis, sym_eig(R).basis
            D = unvec(optimal_correction(C, kron_basis(Q_L, Q_R)), (m, n))
            report = frobenius_residuals(C, L, R, Q_L, Q_R, D)
            self.assertLessEqual(report.corrected, report.shampoo + 1e-12)
            self.assertLessEqual(
                report.corrected, report.shampoo2_trace + 1e-12
            )


class PartialTracesTests(SimpleTestCase):
    def test_single_sample(self):
        G = np.random.default_rng(11).standard_normal((3, 5))
        g = vec(G)
        L, R = partial_traces(np.outer(g, g), 3, 5)
        assert_allclose(L, G @ G.T, atol=1e-12)
        assert_allclose(R, G.T @ G, atol=1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(DimError):
            partial_traces(np.eye(6), 4, 2)


class VecEquivalenceTests(SimpleTestCase):
    """Matrix-form updates against the explicit mn×mn preconditioner."""

    def setUp(self):
        self.rng = np.random.default_rng(12)

    def cases(self):
        for _ in range(50):
            m, n = self.rng.integers(2, 7, size=2)
            L, R = random_spd(m, self.rng), random_spd(n, self.rng)
            yield L, R, self.rng.standard_normal((m, n))

    def assertMatches(self, U, expected):
        assert_allclose(
            U, expected, rtol=1e-9, atol=1e-9 * np.linalg.norm(expected)
        )

    def config(self, variant):
        return OptimizerConfig(
            variant, epsilon=0.0, beta2=0.7, max_preconditioner_dim=1
        )

    def test_shampoo(self):
        cfg = self.config("shampoo")
        for L, R, G in self.cases():
            U = shampoo_update(block_with_factors(cfg, L, R), G, cfg)
            C = shampoo_kron_preconditioner(L, R, p=0.5)
            self.assertMatches(U, full_matrix_update(C, G, 0.5))

    def test_shampoo2_trace(self):
        cfg = self.config("shampoo2_trace")
        for L, R, G in self.cases():
            R = R * np.trace(L) / np.trace(R)
            U = shampoo2_trace_update(block_with_factors(cfg, L, R), G, cfg)
            C = shampoo_kron_preconditioner(
                L, R, squared=True, trace_scaled=True
            )
            self.assertMatches(U, full_matrix_update(C, G, 0.5))

    def test_adam(self):
        for _, _, G in self.cases():
            D, U = adam_update(
                self.rng.uniform(0.1, 1.0, G.shape), G, 0.7, 0.0
            )
            C = np.diag(vec(D))
            self.assertMatches(U, full_matrix_update(C, G, 0.5))

    def test_shampoo_grafted(self):
        cfg = self.config("shampoo_grafted")
        for L, R, G in self.cases():
            _, U_adam = adam_update(np.zeros(G.shape), G, 0.7, 0.0)
            block = block_with_factors(cfg, L, R)
            U = graft_rescale(shampoo_update(block, G, cfg), U_adam)
            direction = full_matrix_update(
                shampoo_kron_preconditioner(L, R), G, 0.5
            )
            scale = np.linalg.norm(U_adam) / np.linalg.norm(direction)
            self.assertMatches(U, scale * direction)

    def test_eshampoo(self):
        cfg = self.config("eshampoo")
        for L, R, G in self.cases():
            block = block_with_factors(cfg, L, R)
            block.correction = self.rng.uniform(0.1, 1.0, G.shape)
            U = eshampoo_update(block, G, cfg)
            K = kron_basis(block.left.basis, block.right.basis)
            C = (K * vec(block.correction)) @ K.T
            self.assertMatches(U, full_matrix_update(C, G, 0.5))
