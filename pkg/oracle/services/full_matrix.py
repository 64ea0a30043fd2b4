"""
Explicit mn×mn preconditioners for desk-scale checks.

Everything here builds dense Kronecker products, so it is only used on
small blocks: unit tests, the invariant checker and the
`oracle_optimal` correction mode. Matrices larger than MAX_ORACLE_DIM
on a side are refused with SizeGuard.
"""

import enum
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from linalg.exceptions import DimError, SingularFactor
from linalg.services.decompositions import (
    as_square,
    mat_power,
    sym_eig,
    sym_matrix,
)
from linalg.services.kronecker import kron_basis, unvec, vec
from oracle.exceptions import NonPositiveScale, SizeGuard

logger = logging.getLogger(__name__)

MAX_ORACLE_DIM = 4096


def check_size(dim: int):
    if dim > MAX_ORACLE_DIM:
        raise SizeGuard(
            f"refusing to build a {dim}×{dim} matrix "
            f"(limit {MAX_ORACLE_DIM})"
        )


class AccumulationMode(str, enum.Enum):
    ADAGRAD_SUM = "adagrad_sum"
    ADAM_EMA = "adam_ema"


@dataclass
class FullMatrixState:
    """Explicit second moment C of vectorized gradients."""

    dim: int
    C: np.ndarray
    mode: AccumulationMode = AccumulationMode.ADAM_EMA
    beta2: float = 0.999

    def __post_init__(self):
        check_size(self.dim)
        self.mode = AccumulationMode(self.mode)
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta2 must lie in [0, 1)")

    @classmethod
    def zeros(cls, dim: int, mode=AccumulationMode.ADAM_EMA, beta2=0.999):
        check_size(dim)
        return cls(dim, np.zeros((dim, dim)), mode, beta2)


def full_update(
    state: FullMatrixState, g, beta2: Optional[float] = None
) -> FullMatrixState:
    """Accumulate ggᵀ into C, either as a running sum or as an EMA."""
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if g.shape[0] != state.dim:
        raise DimError(f"gradient of length {g.shape[0]} != {state.dim}")
    outer = np.outer(g, g)
    if state.mode is AccumulationMode.ADAGRAD_SUM:
        state.C = state.C + outer
    else:
        beta = state.beta2 if beta2 is None else beta2
        state.C = beta * state.C + (1.0 - beta) * outer
    state.C = 0.5 * (state.C + state.C.T)
    return state


def optimal_correction(C, Q) -> np.ndarray:
    """
    diag(Qᵀ C Q): the Frobenius-optimal diagonal D for C ≈ Q diag(D) Qᵀ.
    """
    C = as_square(C)
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != C.shape:
        raise DimError(f"basis {Q.shape} does not match C {C.shape}")
    return np.einsum("ij,ik,kj->j", Q, C, Q)


def shampoo_kron_preconditioner(
    L, R, p: float = 0.5, squared: bool = False, trace_scaled: bool = False
) -> np.ndarray:
    """
    Explicit Kronecker preconditioner built from factors L (m×m), R (n×n).

    Args:
        L: left factor
        R: right factor
        p: power applied to each factor when `squared` is False
        squared: use R ⊗ L itself (the Shampoo² form)
        trace_scaled: divide by tr(L) (squared) or by tr(L)^p

    Returns:
        mn×mn ndarray in the column-major vec convention
    """
    L, R = sym_matrix(L), sym_matrix(R)
    check_size(L.shape[0] * R.shape[0])

    if squared:
        preconditioner = np.kron(R, L)
        scale_power = 1.0
    else:
        preconditioner = np.kron(
            mat_power(sym_eig(R), p), mat_power(sym_eig(L), p)
        )
        scale_power = p

    if trace_scaled:
        trace = float(np.trace(L))
        if trace <= 0:
            raise NonPositiveScale("trace scaling needs tr(L) > 0")
        preconditioner = preconditioner / trace**scale_power
    return preconditioner


def norm_bounds(D, G, p: float) -> tuple[float, float]:
    """
    Sandwich for ‖Q (D^{-p} ⊙ (QᵀG)) ‖_F with any orthogonal Q.

    Returns:
        (D_max^{-p}‖G‖_F, D_min^{-p}‖G‖_F)
    """
    D = np.asarray(D, dtype=np.float64)
    if D.size == 0 or np.any(D <= 0):
        raise NonPositiveScale("scaling matrix must be strictly positive")
    norm = float(np.linalg.norm(G))
    return float(D.max() ** -p * norm), float(D.min() ** -p * norm)


def extreme_eig_bounds(C, G, p: float) -> tuple[float, float]:
    """(λ_max(C)^{-p}‖G‖_F, λ_min(C)^{-p}‖G‖_F) for SPD C."""
    values = sym_eig(C).values
    if values[-1] <= 0:
        raise SingularFactor("C must be positive definite")
    norm = float(np.linalg.norm(G))
    return float(values[0] ** -p * norm), float(values[-1] ** -p * norm)


class ResidualReport(NamedTuple):
    shampoo: float
    shampoo2_trace: float
    corrected: float


def frobenius_residuals(C_full, L, R, Q_L, Q_R, D) -> ResidualReport:
    """
    ‖C − P‖_F for the Shampoo, trace-scaled Shampoo² and
    eigenvalue-corrected approximations P of C_full.
    """
    C_full = as_square(C_full)
    check_size(C_full.shape[0])
    K = kron_basis(Q_L, Q_R)
    corrected = (K * vec(D)) @ K.T
    return ResidualReport(
        shampoo=float(
            np.linalg.norm(C_full - shampoo_kron_preconditioner(L, R))
        ),
        shampoo2_trace=float(
            np.linalg.norm(
                C_full
                - shampoo_kron_preconditioner(
                    L, R, squared=True, trace_scaled=True
                )
            )
        ),
        corrected=float(np.linalg.norm(C_full - corrected)),
    )


def partial_traces(C, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Recover L = E[GGᵀ] (m×m) and R = E[GᵀG] (n×n) from C = E[ggᵀ].
    """
    C = as_square(C)
    if C.shape[0] != m * n:
        raise DimError(f"C is {C.shape[0]} wide, expected {m}·{n}")
    blocks = C.reshape(n, m, n, m)
    left = np.einsum("jijl->il", blocks)
    right = np.einsum("jiki->jk", blocks)
    return sym_matrix(left), sym_matrix(right)


def full_matrix_update(C, G, p: float = 0.5, epsilon: float = 0.0):
    """U = −unvec((C + εI)^{-p} vec(G))."""
    G = np.asarray(G, dtype=np.float64)
    C = as_square(C)
    if C.shape[0] != G.size:
        raise DimError(f"C is {C.shape[0]} wide, gradient has {G.size}")
    check_size(G.size)
    inverse_root = mat_power(sym_eig(C), -p, epsilon)
    return -unvec(inverse_root @ vec(G), G.shape)


class IdealizedUpdates(NamedTuple):
    adam: np.ndarray
    eshampoo: np.ndarray
    shampoo: np.ndarray
    full_matrix: np.ndarray


def idealized_updates(C, G, p: float = 0.5) -> IdealizedUpdates:
    """
    Updates every method would take if its statistics were exact
    expectations under the gradient covariance C.
    """
    G = np.asarray(G, dtype=np.float64)
    m, n = G.shape
    C = as_square(C)
    L, R = partial_traces(C, m, n)

    diag_c = unvec(np.diag(C), (m, n))
    if np.any(diag_c <= 0):
        raise NonPositiveScale("C must have a positive diagonal")
    adam = -G * diag_c**-p

    left, right = sym_eig(L), sym_eig(R)
    K = kron_basis(left.basis, right.basis)
    D = unvec(optimal_correction(C, K), (m, n))
    if np.any(D <= 0):
        raise NonPositiveScale("rotated C must have a positive diagonal")
    rotated = left.basis.T @ G @ right.basis
    eshampoo = -left.basis @ (rotated * D**-p) @ right.basis.T

    shampoo = -mat_power(left, -p / 2) @ G @ mat_power(right, -p / 2)

    return IdealizedUpdates(
        adam=adam,
        eshampoo=eshampoo,
        shampoo=shampoo,
        full_matrix=full_matrix_update(C, G, p),
    )
