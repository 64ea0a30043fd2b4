import math
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose, assert_array_equal

from .exceptions import DatasetFormatError, TaskError, UnknownTask
from .services.datasets import (
    export_dataset_csv,
    gaussian_mixture,
    load_dataset_csv,
)
from .services.problems import (
    KronQuadratic,
    MatrixRegression,
    MlpToy,
    build_task,
    gradient_check,
    kron_quadratic,
    matrix_regression,
    mlp_toy,
)


def random_points(task, rng, count=10, scale=1.0):
    for _ in range(count):
        yield [scale * rng.standard_normal(s) for s in task.shapes]


class KronQuadraticTests(SimpleTestCase):
    def test_target_is_stationary(self):
        task = kron_quadratic(4, 3, seed=1)
        self.assertEqual(task.loss([task.target]), 0.0)
        assert_array_equal(task.grad([task.target])[0], np.zeros((4, 3)))

    def test_identity_curvature(self):
        task = kron_quadratic(3, 2, seed=2)
        task.A, task.B = np.eye(3), np.eye(2)
        W = np.ones((3, 2))
        assert_allclose(task.grad([W])[0], W - task.target)

    def test_finite_differences(self):
        rng = np.random.default_rng(3)
        for noise in (0.0, 0.5):
            task = kron_quadratic(8, 6, seed=4, noise=noise)
            for point in random_points(task, rng):
                self.assertLessEqual(
                    gradient_check(task, point, batch_seed=11), 1e-5
                )

    def test_noise_is_seeded(self):
        task = kron_quadratic(3, 3, seed=5, noise=1.0)
        W = [np.zeros((3, 3))]
        assert_array_equal(task.grad(W, 7)[0], task.grad(W, 7)[0])
        self.assertFalse(np.array_equal(task.grad(W, 7)[0], task.grad(W)[0]))
        self.assertTrue(task.stochastic)

    def test_hessian_is_kronecker(self):
        task = kron_quadratic(3, 2, seed=6)
        W = np.zeros((3, 2))
        columns = []
        for index in range(6):
            E = np.zeros(6)
            E[index] = 1.0
            shift = E.reshape((3, 2), order="F")
            columns.append(
                (task.grad([W + shift])[0] - task.grad([W])[0]).reshape(
                    -1, order="F"
                )
            )
        assert_allclose(
            np.column_stack(columns), np.kron(task.B, task.A), atol=1e-12
        )


class MatrixRegressionTests(SimpleTestCase):
    def test_normal_equations_zero_gradient(self):
        task = matrix_regression(4, 3, 20, seed=1)
        W = np.linalg.solve(task.X.T @ task.X, task.X.T @ task.Y)
        assert_allclose(task.grad([W])[0], 0.0, atol=1e-10)

    def test_identity_design(self):
        Y = np.arange(6.0).reshape(3, 2)
        task = MatrixRegression.from_arrays(np.eye(3), Y)
        W = np.ones((3, 2))
        assert_allclose(task.grad([W])[0], W - Y)

    def test_finite_differences(self):
        rng = np.random.default_rng(2)
        for batch_size in (None, 5):
            task = matrix_regression(5, 4, 30, seed=3, batch_size=batch_size)
            for point in random_points(task, rng):
                self.assertLessEqual(
                    gradient_check(task, point, batch_seed=9), 1e-5
                )

    def test_minibatch_is_unbiased_scale(self):
        task = matrix_regression(3, 2, 12, seed=4, batch_size=12)
        W = [np.ones((3, 2))]
        assert_allclose(task.grad(W, 3)[0], task.grad(W)[0])

    def test_rejects_bad_batch_size(self):
        with self.assertRaises(ValueError):
            matrix_regression(2, 2, 5, batch_size=6)


class MlpToyTests(SimpleTestCase):
    def test_zero_weights_give_uniform_loss(self):
        task = mlp_toy(hidden=8, seed=0, num_points=256)
        zeros = [np.zeros(s) for s in task.shapes]
        self.assertAlmostEqual(task.loss(zeros), math.log(4), places=12)

    def test_parameter_shapes(self):
        task = MlpToy(hidden=16, seed=1, num_classes=3, num_points=90)
        self.assertEqual(task.shapes, [(16, 2), (16, 1), (3, 16), (3, 1)])

    def test_finite_differences_on_every_parameter(self):
        rng = np.random.default_rng(5)
        for batch_size in (None, 64):
            task = mlp_toy(
                hidden=12, seed=2, num_points=512, batch_size=batch_size
            )
            for point in random_points(task, rng, scale=0.5):
                self.assertLessEqual(
                    gradient_check(task, point, batch_seed=3, samples=6),
                    1e-5,
                )

    def test_gradient_descent_decreases_loss(self):
        task = mlp_toy(hidden=16, seed=3, num_points=512)
        params = task.initial_params()
        previous = task.loss(params)
        for _ in range(50):
            grads = task.grad(params)
            params = [p - 0.05 * g for p, g in zip(params, grads)]
            current = task.loss(params)
            self.assertLess(current, previous)
            previous = current

    def test_minibatches_are_deterministic(self):
        task = mlp_toy(hidden=8, seed=4, num_points=256, batch_size=32)
        params = task.initial_params()
        for a, b in zip(task.grad(params, 5), task.grad(params, 5)):
            assert_array_equal(a, b)


class DatasetTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_mixture_is_balanced(self):
        _, labels = gaussian_mixture(400, 4, seed=0)
        assert_array_equal(np.bincount(labels), [100, 100, 100, 100])

    def test_csv_preserves_data(self):
        points, labels = gaussian_mixture(50, 3, seed=1)
        path = export_dataset_csv(self.dir / "toy.csv", points, labels)
        loaded_points, loaded_labels = load_dataset_csv(path)
        assert_array_equal(loaded_points, points)
        assert_array_equal(loaded_labels, labels)

    def test_task_from_csv_matches_generated_task(self):
        task = mlp_toy(hidden=8, seed=2, num_points=128)
        path = export_dataset_csv(
            self.dir / "toy.csv", task.points, task.labels
        )
        loaded = MlpToy.from_csv(path, hidden=8, seed=2)
        params = task.initial_params()
        self.assertEqual(loaded.loss(params), task.loss(params))

    def test_bad_header(self):
        path = self.dir / "bad.csv"
        path.write_text("a,b,c\n1,2,0\n")
        with self.assertRaises(DatasetFormatError):
            load_dataset_csv(path)

    def test_bad_row(self):
        path = self.dir / "bad.csv"
        path.write_text("x1,x2,label\n1.0,oops,0\n")
        with self.assertRaises(DatasetFormatError):
            load_dataset_csv(path)

    def test_export_command(self):
        out = StringIO()
        path = self.dir / "cmd.csv"
        call_command(
            "export_dataset", str(path), "--num-points", "40", stdout=out
        )
        self.assertIn("Wrote 40 points", out.getvalue())
        points, _ = load_dataset_csv(path)
        self.assertEqual(points.shape, (40, 2))


class BuildTaskTests(SimpleTestCase):
    def test_resolves_names(self):
        task = build_task(
            {"name": "kron_quadratic", "seed": 3, "params": {"m": 4, "n": 2}}
        )
        self.assertIsInstance(task, KronQuadratic)
        self.assertEqual(task.shapes, [(4, 2)])

    def test_same_spec_same_task(self):
        spec = {"name": "mlp_toy", "seed": 1, "params": {"num_points": 64}}
        a, b = build_task(spec), build_task(spec)
        assert_array_equal(a.points, b.points)

    def test_unknown_name(self):
        with self.assertRaises(UnknownTask):
            build_task({"name": "imagenet"})

    @override_settings(DEBUG=True)
    def test_debug_build_checks_gradients(self):
        for spec in (
            {"name": "kron_quadratic", "params": {"m": 4, "n": 3}},
            {"name": "matrix_regression", "params": {"m": 3, "n": 2, "k": 5}},
            {"name": "mlp_toy", "params": {"hidden": 4, "num_points": 32}},
        ):
            with self.subTest(task=spec["name"]):
                with mock.patch(
                    "tasks.services.problems.gradient_check",
                    wraps=gradient_check,
                ) as check:
                    build_task(spec)
                check.assert_called_once()

    @override_settings(DEBUG=True)
    def test_debug_build_rejects_wrong_gradient(self):
        with mock.patch(
            "tasks.services.problems.gradient_check", return_value=1e-3
        ):
            with self.assertRaises(TaskError):
                build_task(
                    {"name": "kron_quadratic", "params": {"m": 2, "n": 2}}
                )

    @override_settings(DEBUG=False)
    def test_release_build_skips_gradient_check(self):
        with mock.patch("tasks.services.problems.gradient_check") as check:
            build_task({"name": "kron_quadratic", "params": {"m": 2, "n": 2}})
        check.assert_not_called()
