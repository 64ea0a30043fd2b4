"""
Desk-scale differentiable problems with analytic gradients.

A task exposes named matrix parameters, a loss and its gradient. With
`batch_seed=None` both are the deterministic full-batch quantities;
a batch seed selects a seeded minibatch or noise draw, and the loss
reported for that seed is the one its gradient differentiates.
"""

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings

from linalg.services.decompositions import random_spd
from tasks.exceptions import TaskError, UnknownTask
from tasks.services.datasets import gaussian_mixture, load_dataset_csv

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
FD_TOLERANCE = 1e-5


class Task:
    """Base class; subclasses fill in shapes, loss and grad."""

    name = ""
    param_names: tuple[str, ...] = ()

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [p.shape for p in self.initial_params()]

    @property
    def stochastic(self) -> bool:
        return False

    def initial_params(self) -> list[np.ndarray]:
        raise NotImplementedError

    def loss(self, params, batch_seed: Optional[int] = None) -> float:
        raise NotImplementedError

    def grad(self, params, batch_seed: Optional[int] = None):
        raise NotImplementedError

    def batch_rng(self, batch_seed: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, int(batch_seed)])

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} seed={self.seed}>"


class KronQuadratic(Task):
    """
    ½ tr((W − W*)ᵀ A (W − W*) B): its Hessian is exactly B ⊗ A.

    With `noise > 0` a seeded Gaussian ξ enters as the linear term
    ⟨ξ, W⟩, so the stochastic gradient is A(W − W*)B + ξ.
    """

    name = "kron_quadratic"
    param_names = ("W",)

    def __init__(self, m: int, n: int, seed: int = 0, noise: float = 0.0):
        super().__init__(seed)
        if m < 1 or n < 1:
            raise ValueError("m and n must be >= 1")
        if noise < 0:
            raise ValueError("noise must be nonnegative")
        rng = np.random.default_rng(self.seed)
        self.A = random_spd(m, rng)
        self.B = random_spd(n, rng)
        self.target = rng.standard_normal((m, n))
        self.noise = float(noise)

    @property
    def stochastic(self) -> bool:
        return self.noise > 0

    def initial_params(self):
        return [np.zeros(self.target.shape)]

    def _noise(self, batch_seed):
        if not self.noise or batch_seed is None:
            return None
        return self.noise * self.batch_rng(batch_seed).standard_normal(
            self.target.shape
        )

    def loss(self, params, batch_seed=None):
        (W,) = params
        error = W - self.target
        value = 0.5 * np.trace(error.T @ self.A @ error @ self.B)
        xi = self._noise(batch_seed)
        if xi is not None:
            value += np.sum(xi * W)
        return float(value)

    def grad(self, params, batch_seed=None):
        (W,) = params
        g = self.A @ (W - self.target) @ self.B
        xi = self._noise(batch_seed)
        return [g if xi is None else g + xi]


class MatrixRegression(Task):
    """½‖XW − Y‖²_F; minibatches subsample rows and rescale by k/b."""

    name = "matrix_regression"
    param_names = ("W",)

    def __init__(
        self,
        m: Optional[int] = None,
        n: Optional[int] = None,
        k: Optional[int] = None,
        seed: int = 0,
        batch_size: Optional[int] = None,
        X=None,
        Y=None,
    ):
        super().__init__(seed)
        if X is None:
            rng = np.random.default_rng(self.seed)
            X = rng.standard_normal((k, m))
            Y = rng.standard_normal((k, n))
        self.X = np.asarray(X, dtype=np.float64)
        self.Y = np.asarray(Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise ValueError("X and Y must be matrices")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y need the same number of rows")
        if batch_size is not None and not 1 <= batch_size <= len(self.X):
            raise ValueError("batch_size must lie in [1, k]")
        self.batch_size = batch_size

    @classmethod
    def from_arrays(cls, X, Y, seed=0, batch_size=None):
        return cls(seed=seed, batch_size=batch_size, X=X, Y=Y)

    @property
    def stochastic(self) -> bool:
        return self.batch_size is not None

    def initial_params(self):
        return [np.zeros((self.X.shape[1], self.Y.shape[1]))]

    def _batch(self, batch_seed):
        k = self.X.shape[0]
        if self.batch_size is None or batch_seed is None:
            return self.X, self.Y, 1.0
        rows = np.sort(
            self.batch_rng(batch_seed).choice(
                k, self.batch_size, replace=False
            )
        )
        return self.X[rows], self.Y[rows], k / self.batch_size

    def loss(self, params, batch_seed=None):
        (W,) = params
        X, Y, scale = self._batch(batch_seed)
        return float(0.5 * scale * np.sum((X @ W - Y) ** 2))

    def grad(self, params, batch_seed=None):
        (W,) = params
        X, Y, scale = self._batch(batch_seed)
        return [scale * X.T @ (X @ W - Y)]


class MlpToy(Task):
    """
    Two-layer tanh network with softmax cross-entropy on a seeded
    Gaussian mixture.

    Parameters are W1 (h×2), b1 (h×1), W2 (C×h) and b2 (C×1); the loss
    is the mean cross-entropy over the (mini)batch.
    """

    name = "mlp_toy"
    param_names = ("W1", "b1", "W2", "b2")

    def __init__(
        self,
        hidden: int = 32,
        seed: int = 0,
        num_classes: int = 4,
        num_points: int = 2048,
        batch_size: Optional[int] = None,
        points=None,
        labels=None,
    ):
        super().__init__(seed)
        if hidden < 1:
            raise ValueError("hidden must be >= 1")
        if points is None:
            points, labels = gaussian_mixture(
                num_points, num_classes, self.seed
            )
        self.points = np.asarray(points, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = max(num_classes, int(self.labels.max()) + 1)
        self.hidden = hidden
        if batch_size is not None and not (
            1 <= batch_size <= len(self.labels)
        ):
            raise ValueError("batch_size must lie in [1, num_points]")
        self.batch_size = batch_size

    @classmethod
    def from_csv(cls, path, hidden=32, seed=0, batch_size=None):
        points, labels = load_dataset_csv(Path(path))
        return cls(
            hidden=hidden,
            seed=seed,
            num_classes=int(labels.max()) + 1,
            batch_size=batch_size,
            points=points,
            labels=labels,
        )

    @property
    def stochastic(self) -> bool:
        return self.batch_size is not None

    def initial_params(self):
        rng = np.random.default_rng([self.seed, 1])
        h, c = self.hidden, self.num_classes
        return [
            rng.standard_normal((h, 2)) / np.sqrt(2.0),
            np.zeros((h, 1)),
            rng.standard_normal((c, h)) / np.sqrt(h),
            np.zeros((c, 1)),
        ]

    def _batch(self, batch_seed):
        if self.batch_size is None or batch_seed is None:
            return self.points, self.labels
        rows = np.sort(
            self.batch_rng(batch_seed).choice(
                len(self.labels), self.batch_size, replace=False
            )
        )
        return self.points[rows], self.labels[rows]

    def _forward(self, params, points):
        W1, b1, W2, b2 = params
        hidden = np.tanh(points @ W1.T + b1.T)
        logits = hidden @ W2.T + b2.T
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(
            np.exp(shifted).sum(axis=1, keepdims=True)
        )
        return hidden, log_probs

    def loss(self, params, batch_seed=None):
        points, labels = self._batch(batch_seed)
        _, log_probs = self._forward(params, points)
        return float(-log_probs[np.arange(len(labels)), labels].mean())

    def grad(self, params, batch_seed=None):
        W1, b1, W2, b2 = params
        points, labels = self._batch(batch_seed)
        hidden, log_probs = self._forward(params, points)

        d_logits = np.exp(log_probs)
        d_logits[np.arange(len(labels)), labels] -= 1.0
        d_logits /= len(labels)

        dW2 = d_logits.T @ hidden
        db2 = d_logits.sum(axis=0).reshape(-1, 1)
        d_pre = (d_logits @ W2) * (1.0 - hidden**2)
        dW1 = d_pre.T @ points
        db1 = d_pre.sum(axis=0).reshape(-1, 1)
        return [dW1, db1, dW2, db2]


def gradient_check(
    task: Task,
    params,
    batch_seed: Optional[int] = None,
    samples: int = 10,
    seed: int = 0,
) -> float:
    """
    Largest central-difference relative error over sampled coordinates.

    Each parameter gets `samples` random coordinates; the step is
    h = 1e-5·(1 + |θ|) and the error |fd − g| / max(|fd|, |g|, 1).
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    grads = task.grad(params, batch_seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for index, param in enumerate(params):
        flat = param.reshape(-1)
        picks = rng.choice(flat.size, min(samples, flat.size), replace=False)
        for coordinate in picks:
            original = flat[coordinate]
            h = FD_STEP * (1.0 + abs(original))
            flat[coordinate] = original + h
            upper = task.loss(params, batch_seed)
            flat[coordinate] = original - h
            lower = task.loss(params, batch_seed)
            flat[coordinate] = original
            numeric = (upper - lower) / (2.0 * h)
            analytic = grads[index].reshape(-1)[coordinate]
            error = abs(numeric - analytic) / max(
                abs(numeric), abs(analytic), 1.0
            )
            worst = max(worst, error)
    return worst


def verify_gradient(task: Task, seed: int = 0) -> float:
    """
    Finite-difference check at a seeded random point.

    Raises:
        TaskError: relative error above FD_TOLERANCE
    """
    rng = np.random.default_rng(seed)
    params = [0.5 * rng.standard_normal(s) for s in task.shapes]
    batch_seed = 1 if task.stochastic else None
    error = gradient_check(task, params, batch_seed, seed=seed)
    if error > FD_TOLERANCE:
        raise TaskError(
            f"{task.name}: gradient check failed (relative error "
            f"{error:.2e})"
        )
    logger.debug("%s gradient check error %.2e", task.name, error)
    return error


TASKS = {
    KronQuadratic.name: KronQuadratic,
    MatrixRegression.name: MatrixRegression,
    MlpToy.name: MlpToy,
}


def kron_quadratic(m: int, n: int, seed: int = 0, noise: float = 0.0):
    return KronQuadratic(m, n, seed, noise)


def matrix_regression(m: int, n: int, k: int, seed: int = 0, **kwargs):
    return MatrixRegression(m, n, k, seed, **kwargs)


def mlp_toy(hidden: int = 32, seed: int = 0, **kwargs):
    return MlpToy(hidden, seed, **kwargs)


def build_task(spec: dict) -> Task:
    """
    Resolve a task spec {"name", "seed", "params"} to a Task.

    An mlp_toy spec may carry `params.dataset_csv` to train on an
    exported dataset instead of generating one. With DEBUG on, the
    analytic gradient is checked against central differences before
    the task is returned.

    Raises:
        UnknownTask: no task under that name
        TaskError: gradient disagrees with finite differences (DEBUG)
    """
    name = spec.get("name")
    if name not in TASKS:
        raise UnknownTask(
            f"unknown task {name!r}; choose from {', '.join(sorted(TASKS))}"
        )
    params = dict(spec.get("params") or {})
    seed = spec.get("seed", 0)
    csv_path = params.pop("dataset_csv", None)
    if name == MlpToy.name and csv_path:
        task = MlpToy.from_csv(csv_path, seed=seed, **params)
    else:
        task = TASKS[name](seed=seed, **params)
    if settings.DEBUG:
        verify_gradient(task)
    logger.debug("built task %r", task)
    return task
