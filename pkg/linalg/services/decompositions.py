"""
Dense symmetric decompositions with fixed ordering and sign conventions.

LAPACK (through numpy.linalg) does the factorizations; this module pins
down what LAPACK leaves free so that results are reproducible:

- eigenvalues are sorted descending (ties keep LAPACK's order);
- the first non-negligible entry of every eigenvector is positive;
- R from a QR decomposition has a nonnegative diagonal.
"""

import logging
from typing import NamedTuple

import numpy as np

from linalg.exceptions import InvalidMatrix, SingularFactor

logger = logging.getLogger(__name__)

# Entries below this fraction of a column's largest magnitude are
# treated as zero when fixing eigenvector signs.
SIGN_TOLERANCE = 1e-12


class EigPair(NamedTuple):
    """Orthogonal eigenbasis (columns) and matching eigenvalues."""

    basis: np.ndarray
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def as_square(matrix) -> np.ndarray:
    """Return a float64 copy of a finite square matrix."""
    array = np.array(matrix, dtype=np.float64)
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        raise InvalidMatrix(f"expected a square matrix, got {array.shape}")
    if array.shape[0] < 1:
        raise InvalidMatrix("matrix must have dimension >= 1")
    if not np.all(np.isfinite(array)):
        raise InvalidMatrix("matrix has non-finite entries")
    return array


def sym_matrix(matrix) -> np.ndarray:
    """
    Build a SymMatrix: the read-only symmetrization (M + Mᵀ) / 2.

    Args:
        matrix: square array-like with finite entries

    Returns:
        float64 ndarray flagged non-writeable
    """
    array = as_square(matrix)
    symmetric = 0.5 * (array + array.T)
    symmetric.setflags(write=False)
    return symmetric


def _fix_column_signs(basis: np.ndarray) -> np.ndarray:
    scale = np.abs(basis).max(axis=0)
    significant = np.abs(basis) > SIGN_TOLERANCE * scale
    first = significant.argmax(axis=0)
    signs = np.sign(basis[first, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def sym_eig(matrix) -> EigPair:
    """
    Full spectral decomposition of a symmetric matrix.

    Args:
        matrix: symmetric array-like (symmetrized before use)

    Returns:
        EigPair with descending eigenvalues and sign-normalized basis
    """
    symmetric = sym_matrix(matrix)
    values, vectors = np.linalg.eigh(symmetric)
    order = np.argsort(-values, kind="stable")
    return EigPair(
        basis=_fix_column_signs(vectors[:, order]),
        values=values[order],
    )


def qr_decompose(matrix) -> tuple[np.ndarray, np.ndarray]:
    """QR decomposition with a nonnegative diagonal in R."""
    array = as_square(matrix)
    q, r = np.linalg.qr(array)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs, signs[:, np.newaxis] * r


def reconstruct(eig: EigPair) -> np.ndarray:
    """Q diag(λ) Qᵀ."""
    return (eig.basis * eig.values) @ eig.basis.T


def mat_power(eig: EigPair, exponent: float, epsilon: float = 0.0):
    """
    Matrix power through a cached eigendecomposition.

    Returns Q diag((λᵢ + ε)^exponent) Qᵀ. The ε shift is applied to the
    eigenvalues, so it acts the same way for every optimizer variant.

    Raises:
        SingularFactor: exponent < 0 and some λᵢ + ε <= 0
    """
    if not np.isfinite(exponent):
        raise ValueError("exponent must be finite")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")

    shifted = eig.values + epsilon
    if exponent < 0:
        if np.any(shifted <= 0):
            raise SingularFactor(
                f"cannot raise eigenvalue {shifted.min():.3e} "
                f"to the power {exponent}"
            )
    else:
        # round-off can leave PSD eigenvalues slightly negative
        shifted = np.maximum(shifted, 0.0)

    powered = (eig.basis * shifted**exponent) @ eig.basis.T
    return 0.5 * (powered + powered.T)


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix from the QR of a standard Gaussian matrix."""
    q, _ = qr_decompose(rng.standard_normal((dim, dim)))
    return q


def random_spd(
    dim: int, rng: np.random.Generator, ridge: float = 0.1
) -> np.ndarray:
    """MᵀM + ridge·I with M standard Gaussian."""
    m = rng.standard_normal((dim, dim))
    return sym_matrix(m.T @ m + ridge * np.eye(dim))
