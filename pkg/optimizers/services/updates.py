"""
Update rules: diagonal Adam, Shampoo, Adam grafting, trace-scaled
Shampoo² and eigenvalue-corrected Shampoo.

Every rule returns the *direction* U; the caller applies W ← W + α·U.
Factor eigenpairs are read from the cache as they are, stale or not.
"""

import enum
import logging
from typing import Optional

import numpy as np

from linalg.services.decompositions import mat_power
from linalg.services.kronecker import kron_basis, unvec, vec
from optimizers.exceptions import DivergentScale, TraceMismatch, ZeroTrace
from oracle.services.full_matrix import full_update, optimal_correction

logger = logging.getLogger(__name__)

TRACE_TOLERANCE = 1e-8


class CorrectionMode(str, enum.Enum):
    SOAP_EMA = "soap_ema"
    BASIS_AWARE = "basis_aware"
    ORACLE_OPTIMAL = "oracle_optimal"


def scaled_division(numerator, second_moment, epsilon: float):
    """
    numerator / (√second_moment + ε), element-wise.

    Entries where both numerator and denominator vanish are 0.

    Raises:
        DivergentScale: a zero denominator meets a nonzero numerator
    """
    denominator = np.sqrt(second_moment) + epsilon
    zero = denominator == 0.0
    if np.any(zero & (numerator != 0.0)):
        raise DivergentScale(
            "zero second moment under a nonzero gradient entry; "
            "use epsilon > 0"
        )
    return np.divide(
        numerator,
        denominator,
        out=np.zeros_like(numerator, dtype=np.float64),
        where=~zero,
    )


def adam_update(D, G, beta3: float, epsilon: float):
    """
    Diagonal Adam without momentum or bias correction.

    Args:
        D: second-moment accumulator (same shape as G)
        G: gradient
        beta3: EMA decay of the accumulator
        epsilon: denominator shift

    Returns:
        Tuple of (D_new, U)
    """
    D = np.asarray(D, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    D_new = beta3 * D + (1.0 - beta3) * G**2
    return D_new, -scaled_division(G, D_new, epsilon)


def shampoo_update(block, G, cfg) -> np.ndarray:
    """U = −L̂^{−p/2} G R̂^{−p/2}, or −(Â + εI)^{−p} g for full blocks."""
    if block.full is not None:
        return _full_update(block, G, cfg)
    left = mat_power(block.left.eigpair(), -cfg.exponent / 2, cfg.epsilon)
    right = mat_power(block.right.eigpair(), -cfg.exponent / 2, cfg.epsilon)
    return -left @ G @ right


def _full_update(block, G, cfg) -> np.ndarray:
    inverse_root = mat_power(block.full.eigpair(), -cfg.exponent, cfg.epsilon)
    return -unvec(inverse_root @ vec(G), G.shape)


def graft_rescale(U_shampoo, U_graft) -> np.ndarray:
    """
    Carry the grafted update's Frobenius norm on Shampoo's direction.

    A zero Shampoo direction yields a zero update; step() reports it.
    """
    shampoo_norm = np.linalg.norm(U_shampoo)
    if shampoo_norm == 0.0:
        return np.zeros_like(U_shampoo)
    return (np.linalg.norm(U_graft) / shampoo_norm) * U_shampoo


def _check_traces(block, cfg):
    # both traces track the EMA of ‖G‖²_F once the init·I seed is removed
    decay = cfg.beta2 ** (block.step_count + 1)
    seed = cfg.factor_init * decay
    left = np.trace(block.left.stat) - seed * block.left.dim
    right = np.trace(block.right.stat) - seed * block.right.dim
    if abs(left - right) > TRACE_TOLERANCE * (1.0 + abs(left)):
        raise TraceMismatch(
            f"tr(L)={left:.12e} differs from tr(R)={right:.12e}"
        )


def trace_scale(block) -> float:
    """S = Σ λ̂_L over the cached left eigenvalues."""
    return float(np.sum(block.left.basis_eigenvalues))


def shampoo2_trace_update(block, G, cfg) -> np.ndarray:
    """
    U = −S^p · L̂^{−p} G R̂^{−p}, the trace-scaled Shampoo² direction.

    Full blocks fall back to full-matrix Adam, where trace scaling is
    the identity.
    """
    if not np.any(G):
        return np.zeros_like(G)
    if block.full is not None:
        return _full_update(block, G, cfg)

    _check_traces(block, cfg)
    scale = trace_scale(block)
    if scale <= 0.0:
        raise ZeroTrace("trace scaling needs tr(L) > 0")
    left = mat_power(block.left.eigpair(), -cfg.exponent, cfg.epsilon)
    right = mat_power(block.right.eigpair(), -cfg.exponent, cfg.epsilon)
    return -(scale**cfg.exponent) * (left @ G @ right)


def _square_transitions(transitions):
    return tuple(None if r is None else r**2 for r in transitions)


def eshampoo_update(
    block, G, cfg, transitions: Optional[tuple] = None
) -> np.ndarray:
    """
    Eigenvalue-corrected Shampoo: precondition element-wise in the
    cached Kronecker eigenbasis.

    The correction D (block.correction) is updated in place according
    to cfg.correction_mode.

    Args:
        block: parameter block holding bases and correction
        G: gradient
        cfg: optimizer config
        transitions: (R_L, R_R) or (R,) transition matrices for the
            factors whose basis changed this step, None entries for
            unchanged ones; only read by the basis_aware mode

    Returns:
        The update direction U
    """
    mode = cfg.correction_mode
    shape = G.shape

    if block.full is not None:
        basis = block.full.basis
        rotated = basis.T @ vec(G)
        D = vec(block.correction)
        if mode == CorrectionMode.BASIS_AWARE and transitions:
            (squared,) = _square_transitions(transitions)
            if squared is not None:
                D = squared @ D
    else:
        left, right = block.left.basis, block.right.basis
        rotated = left.T @ G @ right
        D = block.correction
        if mode == CorrectionMode.BASIS_AWARE and transitions:
            squared_left, squared_right = _square_transitions(transitions)
            if squared_left is not None:
                D = squared_left @ D
            if squared_right is not None:
                D = D @ squared_right.T

    if mode == CorrectionMode.ORACLE_OPTIMAL:
        state = full_update(block.oracle_state, vec(G), cfg.correction_beta)
        if block.full is not None:
            K = block.full.basis
        else:
            K = kron_basis(block.left.basis, block.right.basis)
        D = np.maximum(optimal_correction(state.C, K), 0.0)
        if block.full is None:
            D = unvec(D, shape)
    else:
        beta = cfg.correction_beta
        D = beta * D + (1.0 - beta) * rotated**2

    scaled = scaled_division(rotated, D, cfg.epsilon)
    if block.full is not None:
        block.correction = unvec(D, shape)
        return -unvec(block.full.basis @ scaled, shape)
    block.correction = D
    return -left @ scaled @ right.T
