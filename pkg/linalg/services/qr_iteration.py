"""
Warm-started QR iteration and the relative off-diagonal criterion.

Given a symmetric statistic M and a previous basis Q̂, the rotated
matrix Λ̂ = Q̂ᵀ M Q̂ is nearly diagonal when Q̂ is still a good
eigenbasis. The relative off-diagonal mass of Λ̂ equals the relative
Frobenius error of approximating M by Q̂ diag(Λ̂) Q̂ᵀ, so the same
number decides whether to skip a refresh and when to stop refining.
"""

import logging
from typing import NamedTuple

import numpy as np

from linalg.exceptions import DimError, ZeroNorm
from linalg.services.decompositions import (
    as_square,
    qr_decompose,
    sym_matrix,
)

logger = logging.getLogger(__name__)


class WarmQRResult(NamedTuple):
    basis: np.ndarray
    rotated: np.ndarray
    iters: int
    converged: bool


def offdiag_ratio(matrix) -> float:
    """
    ‖M − diag(M)‖_F / ‖M‖_F, a number in [0, 1].

    Raises:
        ZeroNorm: M is the zero matrix
    """
    array = as_square(matrix)
    total = np.linalg.norm(array)
    if total == 0.0:
        raise ZeroNorm("offdiag_ratio is undefined for the zero matrix")
    off = array - np.diag(np.diag(array))
    return float(np.linalg.norm(off) / total)


def rotate(matrix, basis: np.ndarray) -> np.ndarray:
    """Qᵀ M Q, symmetrized."""
    array = as_square(matrix)
    basis = np.asarray(basis, dtype=np.float64)
    if basis.shape != array.shape:
        raise DimError(
            f"basis {basis.shape} does not match matrix {array.shape}"
        )
    rotated = basis.T @ array @ basis
    return 0.5 * (rotated + rotated.T)


def stale_basis_error(matrix, basis: np.ndarray) -> float:
    """
    Relative error ‖M − Q diag(QᵀMQ) Qᵀ‖_F / ‖M‖_F of a stale basis.

    Equal to offdiag_ratio(rotate(M, Q)) for orthogonal Q.
    """
    array = as_square(matrix)
    total = np.linalg.norm(array)
    if total == 0.0:
        raise ZeroNorm("relative error is undefined for the zero matrix")
    diagonal = np.diag(rotate(array, basis))
    approx = (basis * diagonal) @ basis.T
    return float(np.linalg.norm(array - approx) / total)


def _criterion_holds(rotated: np.ndarray, tau: float) -> bool:
    try:
        return offdiag_ratio(rotated) <= tau
    except ZeroNorm:
        return True


def warm_qr_refine(
    matrix, previous_basis: np.ndarray, tau: float, max_iters: int
) -> WarmQRResult:
    """
    Refine an eigenbasis with unshifted QR iterations started from Q̂.

    Iterates Λ̂ ← RQ (from QR = Λ̂) and Q̂ ← Q̂Q while the criterion
    offdiag_ratio(Λ̂) <= tau is violated and fewer than max_iters
    iterations have run. When the starting Λ̂ already satisfies the
    criterion nothing is done and the previous basis is returned as is.

    Args:
        matrix: symmetric statistic M
        previous_basis: orthogonal warm start Q̂
        tau: relative tolerance in [0, 1)
        max_iters: iteration cap I >= 1

    Returns:
        WarmQRResult(basis, rotated, iters, converged)
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    if max_iters < 1:
        raise ValueError("max_iters must be a positive integer")

    statistic = sym_matrix(matrix)
    basis = np.asarray(previous_basis, dtype=np.float64)
    rotated = rotate(statistic, basis)

    iters = 0
    while not _criterion_holds(rotated, tau) and iters < max_iters:
        q, r = qr_decompose(rotated)
        rotated = r @ q
        rotated = 0.5 * (rotated + rotated.T)
        basis = basis @ q
        iters += 1

    converged = _criterion_holds(rotated, tau)
    if not converged:
        logger.debug(
            "warm QR did not reach tau=%s within %d iterations",
            tau,
            max_iters,
        )
    return WarmQRResult(basis, rotated, iters, converged)
