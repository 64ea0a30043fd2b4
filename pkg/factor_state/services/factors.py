"""
One Kronecker factor: its EMA statistic, cached eigenbasis and the
policy deciding when that basis is checked, refined or recomputed.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from linalg.exceptions import DimError, ZeroNorm
from linalg.services.decompositions import EigPair, sym_eig, sym_matrix
from linalg.services.qr_iteration import (
    offdiag_ratio,
    rotate,
    warm_qr_refine,
)

logger = logging.getLogger(__name__)


class RefreshMode(str, enum.Enum):
    FIXED_EIGH = "fixed_eigh"
    ADAPTIVE_EIGH = "adaptive_eigh"
    ADAPTIVE_QR = "adaptive_qr"
    FROZEN = "frozen"


class DecisionKind(str, enum.Enum):
    NO_CHECK = "NoCheck"
    SKIPPED = "Skipped"
    RECOMPUTED = "Recomputed"
    QR_REFINED = "QRRefined"


@dataclass(frozen=True)
class RefreshPolicy:
    mode: RefreshMode = RefreshMode.FIXED_EIGH
    tau: float = 0.1
    frequency: int = 1
    max_qr_iters: int = 10

    def __post_init__(self):
        object.__setattr__(self, "mode", RefreshMode(self.mode))
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if self.frequency < 1:
            raise ValueError("frequency must be >= 1")
        if self.max_qr_iters < 1:
            raise ValueError("max_qr_iters must be >= 1")


@dataclass(frozen=True)
class RefreshDecision:
    kind: DecisionKind
    criterion: Optional[float] = None
    qr_iters: int = 0

    @property
    def basis_changed(self) -> bool:
        return self.kind in (DecisionKind.RECOMPUTED, DecisionKind.QR_REFINED)

    @property
    def label(self) -> str:
        if self.kind is DecisionKind.QR_REFINED:
            return f"{self.kind.value}({self.qr_iters})"
        return self.kind.value


@dataclass
class FactorState:
    """
    EMA statistic of GGᵀ, GᵀG or ggᵀ plus its cached eigenbasis.

    Owned by exactly one parameter block; operations mutate it in place.
    """

    stat: np.ndarray
    basis: np.ndarray
    basis_eigenvalues: np.ndarray
    name: str = ""
    steps_since_check: int = 0
    eig_count: int = 0
    qr_iter_count: int = 0
    last_criterion: Optional[float] = None

    @classmethod
    def initial(cls, dim: int, init: float = 0.0, name: str = ""):
        if dim < 1:
            raise DimError("factor dimension must be >= 1")
        return cls(
            stat=sym_matrix(init * np.eye(dim)),
            basis=np.eye(dim),
            basis_eigenvalues=np.full(dim, float(init)),
            name=name,
        )

    @property
    def dim(self) -> int:
        return self.stat.shape[0]

    def eigpair(self) -> EigPair:
        """The cached, possibly stale, eigendecomposition."""
        return EigPair(self.basis, self.basis_eigenvalues)


def ema_update(state: FactorState, outer, beta2: float) -> FactorState:
    """stat ← β₂·stat + (1 − β₂)·outer; basis and counters untouched."""
    outer = np.asarray(outer, dtype=np.float64)
    if outer.shape != state.stat.shape:
        raise DimError(
            f"outer product {outer.shape} does not match factor "
            f"{state.stat.shape}"
        )
    if not 0.0 <= beta2 < 1.0:
        raise ValueError("beta2 must lie in [0, 1)")
    state.stat = sym_matrix(beta2 * state.stat + (1.0 - beta2) * outer)
    return state


def transition_matrix(new_basis, old_basis) -> np.ndarray:
    """Q_newᵀ Q_old, the change of coordinates between two bases."""
    new_basis = np.asarray(new_basis, dtype=np.float64)
    old_basis = np.asarray(old_basis, dtype=np.float64)
    if (
        new_basis.ndim != 2
        or new_basis.shape != old_basis.shape
        or new_basis.shape[0] != new_basis.shape[1]
    ):
        raise DimError(
            f"bases {new_basis.shape} and {old_basis.shape} differ"
        )
    return new_basis.T @ old_basis


def _recompute(state: FactorState):
    eig = sym_eig(state.stat)
    state.basis = eig.basis
    state.basis_eigenvalues = eig.values
    state.eig_count += 1


def _criterion(rotated: np.ndarray) -> Optional[float]:
    try:
        return offdiag_ratio(rotated)
    except ZeroNorm:
        return None


def maybe_refresh(
    state: FactorState, policy: RefreshPolicy, step: int
) -> tuple[FactorState, RefreshDecision]:
    """
    Decide whether to skip, QR-refine or recompute the eigenbasis.

    The first call with a nonzero statistic always recomputes. After
    that the criterion is only evaluated when step % frequency == 0.

    Args:
        state: factor to refresh in place
        policy: refresh policy
        step: 1-based optimizer step

    Returns:
        Tuple of (state, decision)
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    state.steps_since_check += 1

    if state.eig_count == 0:
        if not np.any(state.stat):
            # no gradient signal yet: identity basis stays
            return state, RefreshDecision(DecisionKind.SKIPPED)
        _recompute(state)
        state.steps_since_check = 0
        return state, _log(state, RefreshDecision(DecisionKind.RECOMPUTED))

    if policy.mode is RefreshMode.FROZEN or step % policy.frequency:
        return state, RefreshDecision(DecisionKind.NO_CHECK)

    state.steps_since_check = 0
    if policy.mode is RefreshMode.FIXED_EIGH:
        _recompute(state)
        return state, _log(state, RefreshDecision(DecisionKind.RECOMPUTED))

    rotated = rotate(state.stat, state.basis)
    criterion = _criterion(rotated)
    state.last_criterion = criterion

    if criterion is None or criterion <= policy.tau:
        state.basis_eigenvalues = np.diag(rotated).copy()
        return state, _log(
            state, RefreshDecision(DecisionKind.SKIPPED, criterion)
        )

    if policy.mode is RefreshMode.ADAPTIVE_EIGH:
        _recompute(state)
        return state, _log(
            state, RefreshDecision(DecisionKind.RECOMPUTED, criterion)
        )

    result = warm_qr_refine(
        state.stat, state.basis, policy.tau, policy.max_qr_iters
    )
    state.qr_iter_count += result.iters
    if result.converged:
        state.basis = result.basis
        state.basis_eigenvalues = np.diag(result.rotated).copy()
        return state, _log(
            state,
            RefreshDecision(
                DecisionKind.QR_REFINED, criterion, result.iters
            ),
        )

    logger.info(
        "factor %s: QR refinement stalled after %d iterations, "
        "falling back to eigh",
        state.name or "?",
        result.iters,
    )
    _recompute(state)
    return state, _log(
        state,
        RefreshDecision(DecisionKind.RECOMPUTED, criterion, result.iters),
    )


def _log(state: FactorState, decision: RefreshDecision) -> RefreshDecision:
    logger.debug(
        "factor %s: %s (criterion=%s, eig_count=%d)",
        state.name or "?",
        decision.label,
        decision.criterion,
        state.eig_count,
    )
    return decision
