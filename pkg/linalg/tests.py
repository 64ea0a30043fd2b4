import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from .exceptions import InvalidMatrix, SingularFactor, ZeroNorm
from .services.decompositions import (
    EigPair,
    mat_power,
    qr_decompose,
    random_orthogonal,
    random_spd,
    reconstruct,
    sym_eig,
    sym_matrix,
)
from .services.qr_iteration import (
    offdiag_ratio,
    rotate,
    stale_basis_error,
    warm_qr_refine,
)


class SymMatrixTests(SimpleTestCase):
    def test_symmetrizes_input(self):
        m = sym_matrix([[1.0, 2.0], [0.0, 3.0]])
        assert_array_equal(m, [[1.0, 1.0], [1.0, 3.0]])

    def test_result_is_read_only(self):
        m = sym_matrix(np.eye(2))
        with self.assertRaises(ValueError):
            m[0, 0] = 5.0

    def test_rejects_non_square_and_non_finite(self):
        with self.assertRaises(InvalidMatrix):
            sym_matrix(np.ones((2, 3)))
        with self.assertRaises(InvalidMatrix):
            sym_matrix([[1.0, np.nan], [np.nan, 1.0]])


class SymEigTests(SimpleTestCase):
    def test_identity(self):
        eig = sym_eig(np.eye(3))
        assert_allclose(eig.values, [1.0, 1.0, 1.0])
        assert_allclose(eig.basis, np.eye(3), atol=1e-12)

    def test_two_by_two_hand_example(self):
        eig = sym_eig([[2.0, 1.0], [1.0, 2.0]])
        assert_allclose(eig.values, [3.0, 1.0], rtol=1e-12)

    def test_random_spd_reconstruction(self):
        m = random_spd(8, np.random.default_rng(42))
        eig = sym_eig(m)
        error = np.linalg.norm(reconstruct(eig) - m) / np.linalg.norm(m)
        self.assertLessEqual(error, 1e-10)
        orth = np.linalg.norm(eig.basis.T @ eig.basis - np.eye(8))
        self.assertLessEqual(orth, 1e-10 * 8)

    def test_values_sorted_descending(self):
        eig = sym_eig(random_spd(6, np.random.default_rng(3)))
        self.assertTrue(np.all(np.diff(eig.values) <= 0))

    def test_first_nonzero_entry_of_each_vector_is_positive(self):
        eig = sym_eig(random_spd(7, np.random.default_rng(11)))
        for column in eig.basis.T:
            first = column[np.abs(column) > 1e-12][0]
            self.assertGreater(first, 0.0)

    def test_deterministic(self):
        m = random_spd(5, np.random.default_rng(0))
        a, b = sym_eig(m), sym_eig(m)
        assert_array_equal(a.basis, b.basis)
        assert_array_equal(a.values, b.values)

    def test_non_finite_raises(self):
        with self.assertRaises(InvalidMatrix):
            sym_eig([[np.inf, 0.0], [0.0, 1.0]])


class QRDecomposeTests(SimpleTestCase):
    def test_identity(self):
        q, r = qr_decompose(np.eye(4))
        assert_allclose(q, np.eye(4), atol=1e-15)
        assert_allclose(r, np.eye(4), atol=1e-15)

    def test_positive_diagonal(self):
        d = np.diag([2.0, 5.0, 0.5])
        q, r = qr_decompose(d)
        assert_allclose(q, np.eye(3), atol=1e-15)
        assert_allclose(r, d, atol=1e-15)

    def test_random_matrix(self):
        m = np.random.default_rng(6).standard_normal((6, 6))
        q, r = qr_decompose(m)
        self.assertLessEqual(np.linalg.norm(q.T @ q - np.eye(6)), 1e-10)
        self.assertLessEqual(
            np.linalg.norm(q @ r - m), 1e-10 * np.linalg.norm(m)
        )
        self.assertTrue(np.all(np.diag(r) >= 0))
        assert_allclose(np.tril(r, -1), 0.0, atol=1e-15)

    def test_non_finite_raises(self):
        with self.assertRaises(InvalidMatrix):
            qr_decompose([[1.0, np.nan], [0.0, 1.0]])


class OffdiagRatioTests(SimpleTestCase):
    def test_diagonal_is_zero(self):
        self.assertEqual(offdiag_ratio(np.diag([3.0, 1.0, 2.0])), 0.0)

    def test_pure_offdiagonal_is_one(self):
        self.assertAlmostEqual(offdiag_ratio([[0, 1], [1, 0]]), 1.0)

    def test_all_ones(self):
        self.assertAlmostEqual(
            offdiag_ratio([[1, 1], [1, 1]]), np.sqrt(2) / 2, places=12
        )

    def test_zero_matrix_raises(self):
        with self.assertRaises(ZeroNorm):
            offdiag_ratio(np.zeros((3, 3)))

    def test_equals_stale_basis_error(self):
        """Relative error of a stale basis equals the rotated ratio."""
        rng = np.random.default_rng(2024)
        for case in range(100):
            dim = 2 + case % 15
            stat = random_spd(dim, rng)
            basis = random_orthogonal(dim, rng)
            via_ratio = offdiag_ratio(rotate(stat, basis))
            via_error = stale_basis_error(stat, basis)
            self.assertAlmostEqual(via_ratio, via_error, delta=1e-10)


class WarmQRRefineTests(SimpleTestCase):
    def test_diagonal_input_needs_no_iterations(self):
        result = warm_qr_refine(np.diag([4.0, 2.0, 1.0]), np.eye(3), 0.0, 5)
        self.assertEqual(result.iters, 0)
        self.assertTrue(result.converged)
        assert_array_equal(result.basis, np.eye(3))

    def test_two_by_two_converges_to_eigenvalues(self):
        m = [[2.0, 1.0], [1.0, 2.0]]
        result = warm_qr_refine(m, np.eye(2), 1e-8, 50)
        self.assertTrue(result.converged)
        assert_allclose(
            np.sort(np.diag(result.rotated))[::-1], [3.0, 1.0], atol=1e-6
        )
        self.assertLessEqual(offdiag_ratio(result.rotated), 1e-8)

    def test_exact_basis_skips(self):
        rng = np.random.default_rng(8)
        eig = sym_eig(random_spd(5, rng))
        m = reconstruct(eig)
        result = warm_qr_refine(m, eig.basis, 0.1, 10)
        self.assertEqual(result.iters, 0)
        assert_array_equal(result.basis, eig.basis)

    def test_zero_matrix_counts_as_converged(self):
        result = warm_qr_refine(np.zeros((3, 3)), np.eye(3), 0.1, 5)
        self.assertEqual(result.iters, 0)
        self.assertTrue(result.converged)

    def test_similarity_and_orthogonality_after_many_iterations(self):
        rng = np.random.default_rng(17)
        for dim in (3, 6, 10):
            m = random_spd(dim, rng)
            start = random_orthogonal(dim, rng)
            result = warm_qr_refine(m, start, 0.0, 100)
            self.assertLessEqual(result.iters, 100)
            trace = np.trace(m)
            self.assertLessEqual(
                abs(np.trace(result.rotated) - trace),
                1e-9 * (1 + abs(trace)),
            )
            self.assertLessEqual(
                abs(np.linalg.norm(result.rotated) - np.linalg.norm(m)),
                1e-9 * np.linalg.norm(m),
            )
            drift = np.linalg.norm(result.basis.T @ result.basis - np.eye(dim))
            self.assertLessEqual(drift, 1e-8 * dim)
            assert_allclose(
                result.basis.T @ m @ result.basis,
                result.rotated,
                atol=1e-9 * np.linalg.norm(m),
            )

    def test_agrees_with_sym_eig_when_converged(self):
        rng = np.random.default_rng(5)
        spectrum = np.array([8.0, 4.0, 2.0, 1.0, 0.5])
        basis = random_orthogonal(5, rng)
        m = reconstruct(EigPair(basis, spectrum))
        result = warm_qr_refine(m, np.eye(5), 1e-8, 200)
        self.assertTrue(result.converged)
        assert_allclose(
            np.sort(np.diag(result.rotated))[::-1], spectrum, rtol=1e-6
        )

    def test_contract_on_seeded_spd_matrices(self):
        """Converged results meet tau and the spectrum is preserved."""
        rng = np.random.default_rng(99)
        for case in range(50):
            dim = 2 + case % 9
            m = random_spd(dim, rng)
            expected = sym_eig(m).values
            for tau in (0.2, 0.1, 0.01):
                result = warm_qr_refine(m, np.eye(dim), tau, 100)
                if result.converged:
                    self.assertLessEqual(offdiag_ratio(result.rotated), tau)
                else:
                    self.assertEqual(result.iters, 100)
                assert_allclose(
                    sym_eig(result.rotated).values,
                    expected,
                    rtol=1e-9,
                    atol=1e-9 * expected[0],
                )

    def test_rejects_bad_parameters(self):
        with self.assertRaises(ValueError):
            warm_qr_refine(np.eye(2), np.eye(2), 1.0, 5)
        with self.assertRaises(ValueError):
            warm_qr_refine(np.eye(2), np.eye(2), 0.1, 0)


class MatPowerTests(SimpleTestCase):
    def test_identity_quarter_root(self):
        assert_allclose(
            mat_power(sym_eig(np.eye(3)), -0.25), np.eye(3), atol=1e-15
        )

    def test_diagonal_quarter_root(self):
        result = mat_power(sym_eig(np.diag([16.0, 81.0])), -0.25)
        assert_allclose(result, np.diag([0.5, 1 / 3]), atol=1e-14)

    def test_square_root_composes(self):
        rng = np.random.default_rng(21)
        eig = sym_eig(random_spd(6, rng))
        root = mat_power(eig, 0.5, epsilon=0.01)
        target = (eig.basis * (eig.values + 0.01)) @ eig.basis.T
        assert_allclose(
            root @ root, target, rtol=0, atol=1e-9 * np.linalg.norm(target)
        )

    def test_negative_power_of_singular_factor(self):
        eig = sym_eig(np.diag([1.0, 0.0]))
        with self.assertRaises(SingularFactor):
            mat_power(eig, -0.5)
        # ε shifts the zero eigenvalue away
        assert_allclose(
            mat_power(eig, -0.5, epsilon=1.0),
            np.diag([2**-0.5, 1.0]),
            atol=1e-15,
        )
