import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from linalg.exceptions import DimError
from linalg.services.decompositions import random_orthogonal, random_spd
from linalg.services.qr_iteration import offdiag_ratio, rotate

from .services.factors import (
    DecisionKind,
    FactorState,
    RefreshMode,
    RefreshPolicy,
    ema_update,
    maybe_refresh,
    transition_matrix,
)


def _refreshed(stat, mode, tau=0.1, frequency=1, max_qr_iters=10):
    """A factor holding `stat` whose initial eigh has already happened."""
    state = FactorState.initial(len(stat))
    state.stat = np.asarray(stat, dtype=np.float64)
    state.eig_count = 1
    policy = RefreshPolicy(mode, tau, frequency, max_qr_iters)
    return state, policy


class EmaUpdateTests(SimpleTestCase):
    def test_zero_beta_replaces_statistic(self):
        state = FactorState.initial(2, init=5.0)
        outer = np.array([[1.0, 2.0], [2.0, 4.0]])
        ema_update(state, outer, 0.0)
        assert_array_equal(state.stat, outer)

    def test_zero_outer_scales_statistic(self):
        state = FactorState.initial(3, init=2.0)
        ema_update(state, np.zeros((3, 3)), 0.25)
        assert_allclose(state.stat, 0.5 * np.eye(3))

    def test_hand_example(self):
        state = FactorState.initial(2, init=1.0)
        ema_update(state, 3.0 * np.eye(2), 0.5)
        assert_allclose(state.stat, 2.0 * np.eye(2))

    def test_basis_and_counters_untouched(self):
        state = FactorState.initial(2)
        basis = state.basis.copy()
        ema_update(state, np.eye(2), 0.9)
        assert_array_equal(state.basis, basis)
        self.assertEqual(state.eig_count, 0)
        self.assertEqual(state.qr_iter_count, 0)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimError):
            ema_update(FactorState.initial(2), np.eye(3), 0.5)


class RefreshPolicyTests(SimpleTestCase):
    def test_accepts_mode_names(self):
        policy = RefreshPolicy("adaptive_qr", 0.1, 5, 3)
        self.assertIs(policy.mode, RefreshMode.ADAPTIVE_QR)

    def test_rejects_out_of_range_values(self):
        with self.assertRaises(ValueError):
            RefreshPolicy(tau=1.0)
        with self.assertRaises(ValueError):
            RefreshPolicy(frequency=0)
        with self.assertRaises(ValueError):
            RefreshPolicy(max_qr_iters=0)


class MaybeRefreshTests(SimpleTestCase):
    def test_first_call_recomputes_regardless_of_mode(self):
        for mode in RefreshMode:
            state = FactorState.initial(2)
            ema_update(state, [[2.0, 1.0], [1.0, 2.0]], 0.0)
            policy = RefreshPolicy(mode, 0.1, frequency=7)
            _, decision = maybe_refresh(state, policy, 1)
            self.assertIs(decision.kind, DecisionKind.RECOMPUTED)
            self.assertEqual(state.eig_count, 1)
            assert_allclose(state.basis_eigenvalues, [3.0, 1.0])

    def test_zero_statistic_keeps_identity(self):
        state = FactorState.initial(3)
        policy = RefreshPolicy(RefreshMode.ADAPTIVE_EIGH)
        _, decision = maybe_refresh(state, policy, 1)
        self.assertIs(decision.kind, DecisionKind.SKIPPED)
        assert_array_equal(state.basis, np.eye(3))
        self.assertEqual(state.eig_count, 0)

    def test_diagonal_statistic_is_skipped(self):
        state, policy = _refreshed(np.diag([3.0, 1.0]), "adaptive_eigh")
        _, decision = maybe_refresh(state, policy, 4)
        self.assertIs(decision.kind, DecisionKind.SKIPPED)
        self.assertEqual(decision.criterion, 0.0)
        self.assertEqual(state.eig_count, 1)

    def test_off_cadence_step_is_not_checked(self):
        state, policy = _refreshed(
            [[2.0, 1.0], [1.0, 2.0]], "adaptive_eigh", frequency=5
        )
        before = (state.basis.copy(), state.basis_eigenvalues.copy())
        _, decision = maybe_refresh(state, policy, 3)
        self.assertIs(decision.kind, DecisionKind.NO_CHECK)
        self.assertIsNone(decision.criterion)
        assert_array_equal(state.basis, before[0])
        assert_array_equal(state.basis_eigenvalues, before[1])

    def test_violated_criterion_recomputes(self):
        state, policy = _refreshed([[2.0, 1.0], [1.0, 2.0]], "adaptive_eigh")
        _, decision = maybe_refresh(state, policy, 1)
        self.assertIs(decision.kind, DecisionKind.RECOMPUTED)
        # ‖offdiag‖_F = √2, ‖M‖_F = √10
        self.assertAlmostEqual(decision.criterion, np.sqrt(0.2), places=12)
        self.assertEqual(state.eig_count, 2)
        self.assertLessEqual(
            offdiag_ratio(rotate(state.stat, state.basis)), 1e-12
        )

    def test_skipped_never_touches_basis(self):
        rng = np.random.default_rng(1)
        state, policy = _refreshed(random_spd(4, rng), "adaptive_eigh")
        state.basis = random_orthogonal(4, rng)
        policy = RefreshPolicy("adaptive_eigh", tau=0.99)
        basis = state.basis.copy()
        _, decision = maybe_refresh(state, policy, 2)
        self.assertIs(decision.kind, DecisionKind.SKIPPED)
        assert_array_equal(state.basis, basis)
        assert_allclose(
            state.basis_eigenvalues, np.diag(rotate(state.stat, basis))
        )

    def test_adaptive_qr_refines_warm_basis(self):
        state, policy = _refreshed(
            [[2.0, 1.0], [1.0, 2.0]], "adaptive_qr", tau=1e-6, max_qr_iters=50
        )
        _, decision = maybe_refresh(state, policy, 1)
        self.assertIs(decision.kind, DecisionKind.QR_REFINED)
        self.assertGreater(decision.qr_iters, 0)
        self.assertEqual(state.qr_iter_count, decision.qr_iters)
        self.assertEqual(state.eig_count, 1)
        self.assertEqual(decision.label, f"QRRefined({decision.qr_iters})")
        self.assertLessEqual(
            offdiag_ratio(rotate(state.stat, state.basis)), 1e-6
        )

    def test_adaptive_qr_falls_back_to_eigh(self):
        state, policy = _refreshed(
            [[2.0, 1.0], [1.0, 2.0]], "adaptive_qr", tau=1e-12, max_qr_iters=1
        )
        _, decision = maybe_refresh(state, policy, 1)
        self.assertIs(decision.kind, DecisionKind.RECOMPUTED)
        self.assertEqual(decision.qr_iters, 1)
        self.assertEqual(state.qr_iter_count, 1)
        self.assertEqual(state.eig_count, 2)

    def test_frozen_only_computes_once(self):
        state = FactorState.initial(3)
        policy = RefreshPolicy(RefreshMode.FROZEN, frequency=1)
        rng = np.random.default_rng(4)
        for step in range(1, 30):
            g = rng.standard_normal((3, 2))
            ema_update(state, g @ g.T, 0.9)
            maybe_refresh(state, policy, step)
        self.assertEqual(state.eig_count, 1)

    def test_fixed_every_step_diagonalizes(self):
        state = FactorState.initial(4)
        policy = RefreshPolicy(RefreshMode.FIXED_EIGH, frequency=1)
        rng = np.random.default_rng(12)
        for step in range(1, 20):
            g = rng.standard_normal((4, 3))
            ema_update(state, g @ g.T, 0.9)
            maybe_refresh(state, policy, step)
            self.assertLessEqual(
                offdiag_ratio(rotate(state.stat, state.basis)), 1e-9
            )

    def test_adaptive_never_exceeds_fixed_eig_count(self):
        rng = np.random.default_rng(30)
        gradients = [rng.standard_normal((5, 3)) for _ in range(60)]
        counts = {}
        for mode in ("fixed_eigh", "adaptive_eigh", "adaptive_qr"):
            state = FactorState.initial(5)
            policy = RefreshPolicy(mode, tau=0.1, frequency=3)
            for step, g in enumerate(gradients, start=1):
                ema_update(state, g @ g.T, 0.95)
                _, decision = maybe_refresh(state, policy, step)
                if decision.basis_changed and mode != "fixed_eigh":
                    self.assertLessEqual(
                        offdiag_ratio(rotate(state.stat, state.basis)), 0.1
                    )
            counts[mode] = state.eig_count
        self.assertLessEqual(counts["adaptive_eigh"], counts["fixed_eigh"])
        self.assertLessEqual(counts["adaptive_qr"], counts["fixed_eigh"])

    def test_rejects_step_zero(self):
        with self.assertRaises(ValueError):
            maybe_refresh(FactorState.initial(2), RefreshPolicy(), 0)


class TransitionMatrixTests(SimpleTestCase):
    def test_same_basis_is_identity(self):
        q = random_orthogonal(4, np.random.default_rng(0))
        assert_allclose(transition_matrix(q, q), np.eye(4), atol=1e-12)

    def test_identity_old_basis(self):
        q = random_orthogonal(3, np.random.default_rng(1))
        assert_array_equal(transition_matrix(q, np.eye(3)), q.T)

    def test_random_pair_is_orthogonal(self):
        rng = np.random.default_rng(2)
        r = transition_matrix(
            random_orthogonal(5, rng), random_orthogonal(5, rng)
        )
        self.assertLessEqual(np.linalg.norm(r.T @ r - np.eye(5)), 1e-10)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimError):
            transition_matrix(np.eye(2), np.eye(3))
