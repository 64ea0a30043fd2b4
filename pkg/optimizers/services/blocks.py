"""
Parameter blocks, optimizer configuration and the per-block step.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from factor_state.services.factors import (
    FactorState,
    RefreshDecision,
    RefreshPolicy,
    ema_update,
    maybe_refresh,
    transition_matrix,
)
from linalg.exceptions import DimError
from linalg.services.kronecker import vec
from optimizers.exceptions import BoundViolation, NonFiniteUpdate
from optimizers.services.schedules import ConstantSchedule
from optimizers.services.updates import (
    CorrectionMode,
    adam_update,
    eshampoo_update,
    graft_rescale,
    shampoo2_trace_update,
    shampoo_update,
    trace_scale,
)
from oracle.services.full_matrix import (
    AccumulationMode,
    FullMatrixState,
    norm_bounds,
)

logger = logging.getLogger(__name__)

# Relative slack for the debug-mode norm sandwich.
BOUND_SLACK = 1e-9


class Variant(str, enum.Enum):
    ADAM = "adam"
    SHAMPOO = "shampoo"
    SHAMPOO_GRAFTED = "shampoo_grafted"
    SHAMPOO2_TRACE = "shampoo2_trace"
    ESHAMPOO = "eshampoo"


@dataclass(frozen=True)
class OptimizerConfig:
    variant: Variant
    correction_mode: CorrectionMode = CorrectionMode.SOAP_EMA
    schedule: Callable[[int], float] = field(
        default_factory=lambda: ConstantSchedule(1e-3)
    )
    beta2: float = 0.95
    beta3: Optional[float] = None
    epsilon: float = 1e-8
    exponent: float = 0.5
    weight_decay: float = 0.0
    policy: RefreshPolicy = field(default_factory=RefreshPolicy)
    max_preconditioner_dim: int = 64
    factor_init: float = 0.0
    check_bounds: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(
            self, "correction_mode", CorrectionMode(self.correction_mode)
        )
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta2 must lie in [0, 1)")
        if self.beta3 is not None and not 0.0 <= self.beta3 < 1.0:
            raise ValueError("beta3 must lie in [0, 1)")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.exponent <= 0:
            raise ValueError("exponent must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.max_preconditioner_dim < 1:
            raise ValueError("max_preconditioner_dim must be >= 1")
        if self.factor_init < 0:
            raise ValueError("factor_init must be nonnegative")

    @property
    def correction_beta(self) -> float:
        return self.beta2 if self.beta3 is None else self.beta3

    @property
    def preconditioned(self) -> bool:
        return self.variant is not Variant.ADAM


@dataclass
class ParamBlock:
    """
    One trainable matrix and everything the optimizer keeps for it.

    Vectors are stored as n×1 columns. Preconditioned variants hold
    either a full factor over ggᵀ or a left/right Kronecker pair.
    """

    name: str
    weight: np.ndarray
    correction: np.ndarray
    left: Optional[FactorState] = None
    right: Optional[FactorState] = None
    full: Optional[FactorState] = None
    oracle_state: Optional[FullMatrixState] = None
    step_count: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape

    @property
    def is_vector(self) -> bool:
        return 1 in self.weight.shape

    def factors(self) -> dict[str, FactorState]:
        if self.full is not None:
            return {"full": self.full}
        if self.left is not None:
            return {"L": self.left, "R": self.right}
        return {}


@dataclass
class BlockStepReport:
    block: str
    lr: float
    update_norm: float
    graft_norm: Optional[float]
    zero_update: bool
    decisions: dict[str, RefreshDecision]
    factors: dict[str, FactorState]


def as_block_matrix(weight) -> np.ndarray:
    weight = np.array(weight, dtype=np.float64)
    if weight.ndim == 1:
        weight = weight.reshape(-1, 1)
    if weight.ndim != 2 or weight.size == 0:
        raise DimError(f"parameters must be matrices, got {weight.shape}")
    return weight


def make_block(name: str, weight, cfg: OptimizerConfig) -> ParamBlock:
    """
    Build a ParamBlock, choosing full or Kronecker factors by size.

    Args:
        name: block name used in telemetry
        weight: initial parameter (matrix or vector)
        cfg: optimizer config

    Returns:
        ParamBlock with zero correction and fresh factors
    """
    weight = as_block_matrix(weight)
    m, n = weight.shape
    block = ParamBlock(name=name, weight=weight, correction=np.zeros((m, n)))
    if not cfg.preconditioned:
        return block

    init = cfg.factor_init
    if m * n <= cfg.max_preconditioner_dim:
        block.full = FactorState.initial(m * n, init, f"{name}.full")
    else:
        block.left = FactorState.initial(m, init, f"{name}.L")
        block.right = FactorState.initial(n, init, f"{name}.R")

    if (
        cfg.variant is Variant.ESHAMPOO
        and cfg.correction_mode is CorrectionMode.ORACLE_OPTIMAL
    ):
        block.oracle_state = FullMatrixState.zeros(
            m * n, AccumulationMode.ADAM_EMA, cfg.correction_beta
        )
    return block


def effective_scaling(
    block: ParamBlock, cfg: OptimizerConfig
) -> Optional[tuple[np.ndarray, float]]:
    """
    The (D, exponent) pair writing the block's current update as
    Q (D^{-exponent} ⊙ QᵀG) for an orthogonal Q.

    None when the update has no such form: grafted Shampoo, and the
    element-wise rules with ε > 0.
    """
    variant = cfg.variant
    if variant is Variant.SHAMPOO_GRAFTED:
        return None
    if variant in (Variant.ADAM, Variant.ESHAMPOO):
        if cfg.epsilon > 0:
            return None
        return block.correction, 0.5

    if block.full is not None:
        return block.full.basis_eigenvalues + cfg.epsilon, cfg.exponent
    scaling = np.outer(
        block.left.basis_eigenvalues + cfg.epsilon,
        block.right.basis_eigenvalues + cfg.epsilon,
    )
    if variant is Variant.SHAMPOO:
        return scaling, cfg.exponent / 2
    return scaling / trace_scale(block), cfg.exponent


def _accumulate(block: ParamBlock, G: np.ndarray, beta2: float):
    if block.full is not None:
        g = vec(G)
        ema_update(block.full, np.outer(g, g), beta2)
    elif block.left is not None:
        ema_update(block.left, G @ G.T, beta2)
        ema_update(block.right, G.T @ G, beta2)


def _transitions(block, old_bases, decisions):
    transitions = tuple(
        transition_matrix(factor.basis, old_bases[label])
        if decisions[label].basis_changed
        else None
        for label, factor in block.factors().items()
    )
    return transitions if any(t is not None for t in transitions) else None


def _check_bounds(block, G, U, cfg, step_index):
    scaling = effective_scaling(block, cfg)
    if scaling is None:
        return
    D, exponent = scaling
    if np.any(D <= 0):
        return
    lower, upper = norm_bounds(D, G, exponent)
    norm = float(np.linalg.norm(U))
    slack = BOUND_SLACK * max(upper, 1.0)
    if not lower - slack <= norm <= upper + slack:
        raise BoundViolation(step_index, norm, lower, upper)


def step(
    block: ParamBlock, G, cfg: OptimizerConfig, step_index: int
) -> BlockStepReport:
    """
    Advance one block by one optimizer step.

    Order of effects: factor EMAs, refresh decisions, update direction,
    decoupled weight decay, weight update, step counter.

    Args:
        block: parameter block, mutated in place
        G: gradient with the block's shape
        cfg: optimizer config
        step_index: 1-based step, drives the schedule and refresh cadence

    Returns:
        BlockStepReport for telemetry
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim == 1:
        G = G.reshape(-1, 1)
    if G.shape != block.shape:
        raise DimError(
            f"gradient {G.shape} does not match block {block.name} "
            f"{block.shape}"
        )
    if not np.all(np.isfinite(G)):
        raise NonFiniteUpdate(step_index, "gradient has non-finite entries")

    lr = float(cfg.schedule(step_index))

    _accumulate(block, G, cfg.beta2)
    old_bases = {
        label: factor.basis for label, factor in block.factors().items()
    }
    decisions = {
        label: maybe_refresh(factor, cfg.policy, step_index)[1]
        for label, factor in block.factors().items()
    }

    graft_norm = None
    zero_update = False
    variant = cfg.variant
    if variant is Variant.ADAM:
        block.correction, U = adam_update(
            block.correction, G, cfg.correction_beta, cfg.epsilon
        )
    elif variant is Variant.SHAMPOO:
        U = shampoo_update(block, G, cfg)
    elif variant is Variant.SHAMPOO_GRAFTED:
        # grafting always uses β₂, the factor decay
        block.correction, U_graft = adam_update(
            block.correction, G, cfg.beta2, cfg.epsilon
        )
        U_shampoo = shampoo_update(block, G, cfg)
        U = graft_rescale(U_shampoo, U_graft)
        zero_update = not np.any(U_shampoo) and np.any(U_graft)
        graft_norm = lr * float(np.linalg.norm(U_graft))
    elif variant is Variant.SHAMPOO2_TRACE:
        U = shampoo2_trace_update(block, G, cfg)
    else:
        U = eshampoo_update(
            block, G, cfg, _transitions(block, old_bases, decisions)
        )

    if not np.all(np.isfinite(U)):
        raise NonFiniteUpdate(step_index)
    if cfg.check_bounds:
        _check_bounds(block, G, U, cfg, step_index)
    if zero_update:
        logger.warning(
            "block %s: Shampoo direction vanished at step %d",
            block.name,
            step_index,
        )

    if cfg.weight_decay:
        block.weight = block.weight - lr * cfg.weight_decay * block.weight
    block.weight = block.weight + lr * U
    block.step_count += 1

    return BlockStepReport(
        block=block.name,
        lr=lr,
        update_norm=lr * float(np.linalg.norm(U)),
        graft_norm=graft_norm,
        zero_update=bool(zero_update),
        decisions=decisions,
        factors=block.factors(),
    )
