import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from factor_state.services.factors import FactorState, RefreshPolicy
from linalg.exceptions import DimError
from linalg.services.decompositions import (
    random_orthogonal,
    random_spd,
    sym_eig,
    sym_matrix,
)
from linalg.services.kronecker import vec
from oracle.exceptions import SizeGuard

from .exceptions import DivergentScale, NonFiniteUpdate, TraceMismatch
from .services.blocks import (
    OptimizerConfig,
    effective_scaling,
    make_block,
    step,
)
from .services.schedules import (
    ConstantSchedule,
    LinearWarmupCosineSchedule,
    build_schedule,
)
from .services.updates import (
    adam_update,
    eshampoo_update,
    graft_rescale,
    shampoo2_trace_update,
    shampoo_update,
)


def factor(stat):
    """FactorState holding `stat` with its exact eigenbasis cached."""
    eig = sym_eig(stat)
    state = FactorState.initial(eig.dim)
    state.stat = sym_matrix(stat)
    state.basis, state.basis_eigenvalues = eig.basis, eig.values
    state.eig_count = 1
    return state


def kron_block(shape, cfg, left=None, right=None):
    cfg_small = OptimizerConfig(
        cfg.variant,
        cfg.correction_mode,
        beta2=cfg.beta2,
        beta3=cfg.beta3,
        epsilon=cfg.epsilon,
        max_preconditioner_dim=1,
    )
    block = make_block("w", np.zeros(shape), cfg_small)
    if left is not None:
        block.left = factor(left)
    if right is not None:
        block.right = factor(right)
    return block


class AdamUpdateTests(SimpleTestCase):
    def test_zero_gradient(self):
        D, U = adam_update(np.ones((2, 3)), np.zeros((2, 3)), 0.9, 1e-8)
        assert_array_equal(U, np.zeros((2, 3)))
        assert_allclose(D, 0.9 * np.ones((2, 3)))

    def test_zero_beta_gives_sign(self):
        G = np.array([[2.0, -0.5], [-3.0, 7.0]])
        _, U = adam_update(np.zeros((2, 2)), G, 0.0, 0.0)
        assert_allclose(U, -np.sign(G))

    def test_hand_example(self):
        D, U = adam_update(np.zeros((1, 1)), [[3.0]], 0.5, 0.0)
        assert_allclose(D, [[4.5]])
        assert_allclose(U, [[-3.0 / math.sqrt(4.5)]])
        self.assertAlmostEqual(U[0, 0], -1.41421, places=5)

    def test_underflowing_moment_diverges(self):
        with self.assertRaises(DivergentScale):
            adam_update(np.zeros((1, 2)), [[1e-200, 1.0]], 0.5, 0.0)


class ShampooUpdateTests(SimpleTestCase):
    def setUp(self):
        self.cfg = OptimizerConfig("shampoo", epsilon=0.0)
        self.G = np.random.default_rng(0).standard_normal((3, 4))

    def test_identity_factors(self):
        block = kron_block((3, 4), self.cfg, np.eye(3), np.eye(4))
        assert_allclose(shampoo_update(block, self.G, self.cfg), -self.G)

    def test_scaled_identity_factors(self):
        block = kron_block(
            (3, 4), self.cfg, 16.0 * np.eye(3), 81.0 * np.eye(4)
        )
        assert_allclose(
            shampoo_update(block, self.G, self.cfg), -self.G / 6.0
        )

    def test_iid_equality_case(self):
        m, n, sigma = 8, 8, 0.7
        G = np.random.default_rng(1).standard_normal((m, n))
        block = kron_block(
            (m, n),
            self.cfg,
            n * sigma**2 * np.eye(m),
            m * sigma**2 * np.eye(n),
        )
        norm = np.linalg.norm(shampoo_update(block, G, self.cfg))
        expected = (m * n) ** -0.25 / sigma * np.linalg.norm(G)
        self.assertAlmostEqual(norm / expected, 1.0, delta=1e-9)

    def test_stale_factors_are_used_as_is(self):
        block = kron_block((3, 4), self.cfg, np.eye(3), np.eye(4))
        block.left.stat = sym_matrix(100.0 * np.eye(3))
        assert_allclose(shampoo_update(block, self.G, self.cfg), -self.G)


class GraftRescaleTests(SimpleTestCase):
    def test_same_direction_is_unchanged(self):
        U = np.arange(6.0).reshape(2, 3)
        assert_allclose(graft_rescale(U, U), U)

    def test_normalizes_to_graft_norm(self):
        X = np.array([[1.0, 2.0], [2.0, 4.0]])
        graft = np.array([[0.6, 0.0], [0.0, 0.8]])
        assert_allclose(graft_rescale(2.0 * X, graft), X / np.linalg.norm(X))

    def test_norm_identity_on_seeded_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            shampoo = rng.standard_normal((4, 5))
            graft = rng.standard_normal((4, 5)) * rng.uniform(0.1, 10.0)
            U = graft_rescale(shampoo, graft)
            self.assertLessEqual(
                abs(np.linalg.norm(U) - np.linalg.norm(graft)), 1e-12
            )

    def test_zero_direction_gives_zero_update(self):
        U = graft_rescale(np.zeros((2, 2)), np.ones((2, 2)))
        assert_array_equal(U, np.zeros((2, 2)))


class Shampoo2TraceUpdateTests(SimpleTestCase):
    def setUp(self):
        self.cfg = OptimizerConfig("shampoo2_trace", epsilon=0.0)

    def test_zero_gradient(self):
        block = kron_block((3, 3), self.cfg, np.eye(3), np.eye(3))
        U = shampoo2_trace_update(block, np.zeros((3, 3)), self.cfg)
        assert_array_equal(U, np.zeros((3, 3)))

    def test_identity_factors_scale_by_root_trace(self):
        m = 4
        G = np.random.default_rng(2).standard_normal((m, m))
        block = kron_block((m, m), self.cfg, np.eye(m), np.eye(m))
        assert_allclose(
            shampoo2_trace_update(block, G, self.cfg), -math.sqrt(m) * G
        )

    def test_trace_mismatch_is_detected(self):
        block = kron_block((2, 2), self.cfg, np.eye(2), 3.0 * np.eye(2))
        with self.assertRaises(TraceMismatch):
            shampoo2_trace_update(block, np.ones((2, 2)), self.cfg)


class EShampooUpdateTests(SimpleTestCase):
    def test_identity_bases_reduce_to_adam(self):
        rng = np.random.default_rng(8)
        cfg = OptimizerConfig("eshampoo", beta2=0.9, epsilon=1e-8)
        for case in range(200):
            m, n = 2 + case % 5, 2 + case % 3
            block = kron_block((m, n), cfg, np.eye(m), np.eye(n))
            D = rng.uniform(0.0, 2.0, (m, n))
            G = rng.standard_normal((m, n))
            block.correction = D.copy()
            U = eshampoo_update(block, G, cfg)
            D_adam, U_adam = adam_update(D, G, 0.9, 1e-8)
            assert_allclose(U, U_adam, rtol=0, atol=1e-12)
            assert_allclose(block.correction, D_adam, rtol=0, atol=1e-12)

    def test_unit_entries_without_memory(self):
        rng = np.random.default_rng(9)
        cfg = OptimizerConfig("eshampoo", beta2=0.0, epsilon=0.0)
        m, n = 5, 3
        block = kron_block((m, n), cfg)
        block.left.basis = random_orthogonal(m, rng)
        block.right.basis = random_orthogonal(n, rng)
        U = eshampoo_update(block, rng.standard_normal((m, n)), cfg)
        self.assertAlmostEqual(
            np.linalg.norm(U), math.sqrt(m * n), delta=1e-12
        )

    def test_magnitude_ignores_basis(self):
        rng = np.random.default_rng(10)
        cfg = OptimizerConfig("eshampoo", beta2=0.5, epsilon=1e-8)
        m, n = 4, 6
        rotated = rng.standard_normal((m, n))
        D = rng.uniform(0.5, 2.0, (m, n))
        norms = []
        for _ in range(5):
            block = kron_block((m, n), cfg)
            block.left.basis = random_orthogonal(m, rng)
            block.right.basis = random_orthogonal(n, rng)
            block.correction = D.copy()
            G = block.left.basis @ rotated @ block.right.basis.T
            norms.append(np.linalg.norm(eshampoo_update(block, G, cfg)))
        assert_allclose(norms, norms[0], rtol=0, atol=1e-12)

    def test_basis_aware_matches_soap_when_basis_unchanged(self):
        rng = np.random.default_rng(11)
        soap = OptimizerConfig("eshampoo", "soap_ema", beta2=0.9)
        aware = OptimizerConfig("eshampoo", "basis_aware", beta2=0.9)
        blocks = [kron_block((3, 4), cfg) for cfg in (soap, aware)]
        for _ in range(20):
            G = rng.standard_normal((3, 4))
            eshampoo_update(blocks[0], G, soap)
            eshampoo_update(blocks[1], G, aware, (None, None))
        assert_array_equal(blocks[0].correction, blocks[1].correction)

    def test_basis_aware_transition_matches_vectorized_form(self):
        rng = np.random.default_rng(12)
        m, n = 3, 5
        R_L = random_orthogonal(m, rng)
        R_R = random_orthogonal(n, rng)
        D = rng.uniform(0.0, 3.0, (m, n))
        cfg = OptimizerConfig("eshampoo", "basis_aware", beta2=0.5)
        block = kron_block((m, n), cfg)
        block.correction = D.copy()
        # a zero gradient isolates the transport
        eshampoo_update(block, np.zeros((m, n)), cfg, (R_L, R_R))
        transported = 2.0 * block.correction
        vectorized = np.kron(R_R, R_L) ** 2 @ vec(D)
        assert_allclose(vec(transported), vectorized, atol=1e-12)
        assert_allclose(
            np.kron(R_R, R_L) ** 2, np.kron(R_R**2, R_L**2), atol=1e-15
        )
        self.assertAlmostEqual(transported.sum(), D.sum(), delta=1e-10)

    def test_transport_conserves_mass(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            m, n = rng.integers(2, 9, size=2)
            R_L, R_R = random_orthogonal(m, rng), random_orthogonal(n, rng)
            D = rng.uniform(0.0, 1.0, (m, n))
            moved = R_L**2 @ D @ (R_R**2).T
            self.assertAlmostEqual(moved.sum(), D.sum(), delta=1e-10)


class MakeBlockTests(SimpleTestCase):
    def test_vector_gets_full_factor(self):
        block = make_block("b", np.zeros(5), OptimizerConfig("eshampoo"))
        self.assertEqual(block.shape, (5, 1))
        self.assertTrue(block.is_vector)
        self.assertEqual(block.full.dim, 5)
        self.assertIsNone(block.left)

    def test_large_matrix_gets_kronecker_pair(self):
        block = make_block("w", np.zeros((10, 8)), OptimizerConfig("shampoo"))
        self.assertIsNone(block.full)
        self.assertEqual((block.left.dim, block.right.dim), (10, 8))
        self.assertEqual(list(block.factors()), ["L", "R"])

    def test_adam_has_no_factors(self):
        block = make_block("w", np.zeros((10, 8)), OptimizerConfig("adam"))
        self.assertEqual(block.factors(), {})

    def test_oracle_mode_tracks_full_statistic(self):
        cfg = OptimizerConfig("eshampoo", "oracle_optimal")
        block = make_block("w", np.zeros((10, 8)), cfg)
        self.assertEqual(block.oracle_state.dim, 80)

    def test_oracle_mode_refuses_huge_blocks(self):
        cfg = OptimizerConfig("eshampoo", "oracle_optimal")
        with self.assertRaises(SizeGuard):
            make_block("w", np.zeros((70, 70)), cfg)

    def test_rejects_scalars(self):
        with self.assertRaises(DimError):
            make_block("s", np.float64(1.0), OptimizerConfig("adam"))


class StepTests(SimpleTestCase):
    def test_zero_learning_rate_still_advances_state(self):
        cfg = OptimizerConfig("shampoo", schedule=ConstantSchedule(0.0))
        weight = np.random.default_rng(0).standard_normal((9, 8))
        block = make_block("w", weight, cfg)
        report = step(block, np.ones((9, 8)), cfg, 1)
        assert_array_equal(block.weight, weight)
        self.assertEqual(block.step_count, 1)
        self.assertEqual(block.left.eig_count, 1)
        self.assertEqual(report.update_norm, 0.0)

    def test_adam_single_element(self):
        cfg = OptimizerConfig(
            "adam", schedule=ConstantSchedule(1.0), beta2=0.5, epsilon=0.0
        )
        block = make_block("w", [[1.0]], cfg)
        step(block, [[3.0]], cfg, 1)
        assert_allclose(block.weight, [[1.0 - 3.0 / math.sqrt(4.5)]])

    def test_weight_decay_is_decoupled(self):
        cfg = OptimizerConfig(
            "adam", schedule=ConstantSchedule(0.1), weight_decay=0.5
        )
        block = make_block("w", [[2.0]], cfg)
        step(block, [[0.0]], cfg, 1)
        assert_allclose(block.weight, [[2.0 - 0.1 * 0.5 * 2.0]])

    def test_grafted_step_carries_adam_norm(self):
        rng = np.random.default_rng(5)
        cfg = OptimizerConfig(
            "shampoo_grafted",
            schedule=ConstantSchedule(0.01),
            policy=RefreshPolicy("adaptive_eigh", 0.1, 10),
        )
        block = make_block("w", rng.standard_normal((10, 8)), cfg)
        for t in range(1, 201):
            G = block.weight + 0.1 * rng.standard_normal((10, 8))
            before = block.weight.copy()
            report = step(block, G, cfg, t)
            self.assertLessEqual(
                abs(report.update_norm - report.graft_norm), 1e-12
            )
            applied = np.linalg.norm(block.weight - before)
            self.assertLessEqual(abs(applied - report.graft_norm), 1e-12)

    def test_norm_sandwich_holds_for_every_variant(self):
        """check_bounds raises BoundViolation on the first failing step."""
        for variant in ("adam", "shampoo", "shampoo2_trace", "eshampoo"):
            rng = np.random.default_rng(21)
            cfg = OptimizerConfig(
                variant,
                schedule=ConstantSchedule(1e-3),
                epsilon=0.0,
                factor_init=1e-3,
                max_preconditioner_dim=16,
                check_bounds=True,
                policy=RefreshPolicy("adaptive_eigh", 0.1, 5),
            )
            blocks = [
                make_block("w", rng.standard_normal((8, 6)), cfg),
                make_block("b", rng.standard_normal(6), cfg),
            ]
            for t in range(1, 501):
                for block in blocks:
                    G = block.weight + rng.standard_normal(block.shape)
                    step(block, G, cfg, t)
                    self.assertIsNotNone(effective_scaling(block, cfg))

    def test_non_finite_gradient_reports_step(self):
        cfg = OptimizerConfig("adam")
        block = make_block("w", np.zeros((2, 2)), cfg)
        with self.assertRaises(NonFiniteUpdate) as ctx:
            step(block, [[np.nan, 0.0], [0.0, 0.0]], cfg, 7)
        self.assertEqual(ctx.exception.step, 7)

    def test_shape_mismatch(self):
        cfg = OptimizerConfig("adam")
        block = make_block("w", np.zeros((2, 2)), cfg)
        with self.assertRaises(DimError):
            step(block, np.zeros((3, 2)), cfg, 1)

    def test_basis_aware_runs_with_changing_bases(self):
        rng = np.random.default_rng(3)
        cfg = OptimizerConfig(
            "eshampoo",
            "basis_aware",
            schedule=ConstantSchedule(1e-2),
            policy=RefreshPolicy("fixed_eigh", frequency=3),
        )
        block = make_block("w", rng.standard_normal((9, 8)), cfg)
        for t in range(1, 31):
            step(block, rng.standard_normal((9, 8)), cfg, t)
            self.assertTrue(np.all(block.correction >= 0.0))
        self.assertEqual(block.left.eig_count, 11)

    def test_oracle_optimal_correction_matches_rotated_statistic(self):
        rng = np.random.default_rng(4)
        cfg = OptimizerConfig(
            "eshampoo", "oracle_optimal", schedule=ConstantSchedule(1e-2)
        )
        block = make_block("w", rng.standard_normal((9, 8)), cfg)
        for t in range(1, 6):
            step(block, rng.standard_normal((9, 8)), cfg, t)
        K = np.kron(block.right.basis, block.left.basis)
        expected = np.diag(K.T @ block.oracle_state.C @ K)
        assert_allclose(vec(block.correction), expected, atol=1e-12)

    def test_random_spd_factors_do_not_break_trace_scaling(self):
        cfg = OptimizerConfig("shampoo2_trace", epsilon=0.0)
        rng = np.random.default_rng(6)
        L = random_spd(3, rng)
        R = random_spd(4, rng)
        R = R * np.trace(L) / np.trace(R)
        block = kron_block((3, 4), cfg, L, R)
        U = shampoo2_trace_update(block, rng.standard_normal((3, 4)), cfg)
        self.assertTrue(np.all(np.isfinite(U)))


class ScheduleTests(SimpleTestCase):
    def test_constant(self):
        schedule = ConstantSchedule(0.3)
        self.assertEqual([schedule(t) for t in (1, 10, 1000)], [0.3] * 3)

    def test_warmup_cosine_closed_form(self):
        lr, warmup, total = 0.02, 10, 100
        schedule = LinearWarmupCosineSchedule(lr, warmup, total)
        for t in range(1, total + 20):
            if t <= warmup:
                expected = lr * t / warmup
            else:
                progress = min(1.0, (t - warmup) / (total - warmup))
                expected = lr * 0.5 * (1 + math.cos(math.pi * progress))
            self.assertAlmostEqual(schedule(t), expected, delta=1e-12)
        self.assertAlmostEqual(schedule(warmup), lr, delta=1e-15)
        self.assertAlmostEqual(schedule(total), 0.0, delta=1e-15)

    def test_no_warmup_starts_near_peak(self):
        schedule = LinearWarmupCosineSchedule(1.0, 0, 10)
        self.assertLess(schedule(1), 1.0)
        self.assertGreater(schedule(1), 0.9)

    def test_validation(self):
        with self.assertRaises(ValueError):
            LinearWarmupCosineSchedule(0.1, 20, 10)
        with self.assertRaises(ValueError):
            build_schedule("step_decay", 0.1)
