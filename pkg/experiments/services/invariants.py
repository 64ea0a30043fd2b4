"""
Named numerical checks run by `manage.py check_invariants`.

Every check is a function returning a CheckResult; keyword arguments
shrink or grow its case counts. The exact checks are deterministic and
fast; the directional ones train small networks for a few minutes and
only run on request.
"""

import logging
import math
from typing import Callable, NamedTuple, Optional

import numpy as np

from experiments.services.runner import (
    ExperimentConfig,
    compare_runs,
    run_experiment,
)
from experiments.services.telemetry import recompute_profile
from factor_state.services.factors import (
    FactorState,
    RefreshPolicy,
    ema_update,
)
from linalg.services.decompositions import (
    random_orthogonal,
    random_spd,
    sym_eig,
    sym_matrix,
)
from linalg.services.kronecker import kron_basis, unvec, vec
from linalg.services.qr_iteration import (
    offdiag_ratio,
    rotate,
    stale_basis_error,
    warm_qr_refine,
)
from optimizers.exceptions import BoundViolation
from optimizers.services.blocks import OptimizerConfig, make_block, step
from optimizers.services.schedules import ConstantSchedule
from optimizers.services.updates import (
    adam_update,
    eshampoo_update,
    graft_rescale,
    shampoo2_trace_update,
    shampoo_update,
)
from oracle.services.full_matrix import (
    FullMatrixState,
    frobenius_residuals,
    full_matrix_update,
    full_update,
    idealized_updates,
    optimal_correction,
    partial_traces,
    shampoo_kron_preconditioner,
)
from tasks.services.problems import (
    gradient_check,
    kron_quadratic,
    matrix_regression,
    mlp_toy,
)

logger = logging.getLogger(__name__)

LR_GRID = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _result(name, passed, detail) -> CheckResult:
    return CheckResult(name, bool(passed), detail)


def stale_error_identity(cases: int = 100, seed: int = 0) -> CheckResult:
    """Stale-basis error, rotated off-diagonal ratio and its direct form."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        dim = int(rng.integers(2, 17))
        L = random_spd(dim, rng)
        Q = random_orthogonal(dim, rng)
        rotated = rotate(L, Q)
        direct = np.linalg.norm(rotated - np.diag(np.diag(rotated)))
        values = (
            stale_basis_error(L, Q),
            offdiag_ratio(rotated),
            direct / np.linalg.norm(L),
        )
        worst = max(worst, max(values) - min(values))
    return _result(
        "stale_error_identity",
        worst <= 1e-10,
        f"max spread {worst:.3e} over {cases} cases",
    )


def warm_qr_contract(
    cases: int = 50, taus=(0.2, 0.1, 0.01), max_iters: int = 50, seed=1
) -> CheckResult:
    rng = np.random.default_rng(seed)
    failures, converged = [], 0
    for case in range(cases):
        dim = int(rng.integers(2, 13))
        M = random_spd(dim, rng)
        start = random_orthogonal(dim, rng)
        expected = np.linalg.eigvalsh(M)
        for tau in taus:
            result = warm_qr_refine(M, start, tau, max_iters)
            if result.converged:
                converged += 1
                if offdiag_ratio(result.rotated) > tau:
                    failures.append(f"case {case} tau={tau}: criterion")
            drift = np.max(
                np.abs(np.linalg.eigvalsh(result.rotated) - expected)
            ) / max(1.0, float(np.max(np.abs(expected))))
            if drift > 1e-9:
                failures.append(f"case {case} tau={tau}: spectrum")
            ortho = np.linalg.norm(
                result.basis.T @ result.basis - np.eye(dim)
            )
            if ortho > 1e-8 * dim:
                failures.append(f"case {case} tau={tau}: orthogonality")
    total = cases * len(taus)
    detail = f"{converged}/{total} converged"
    if failures:
        detail += "; " + ", ".join(failures[:5])
    return _result("warm_qr_contract", not failures, detail)


def norm_sandwich(steps: int = 500, seed: int = 2) -> CheckResult:
    """Zero-ε runs with the step-level bound check switched on."""
    violations = []
    for variant in ("adam", "shampoo", "shampoo2_trace", "eshampoo"):
        task = kron_quadratic(8, 6, seed=seed, noise=0.1)
        cfg = OptimizerConfig(
            variant,
            schedule=ConstantSchedule(1e-3),
            epsilon=0.0,
            factor_init=1e-3,
            max_preconditioner_dim=16,
            check_bounds=True,
            policy=RefreshPolicy("adaptive_eigh", 0.1, 5),
        )
        block = make_block("W", task.initial_params()[0], cfg)
        try:
            for t in range(1, steps + 1):
                (G,) = task.grad([block.weight], batch_seed=t)
                step(block, G, cfg, t)
        except BoundViolation as exc:
            violations.append(f"{variant}: {exc}")
    return _result(
        "norm_sandwich",
        not violations,
        "; ".join(violations) or f"4 variants x {steps} steps",
    )


def iid_norm_equality(sigma: float = 0.7, m: int = 8, n: int = 8, seed=3):
    G = np.random.default_rng(seed).standard_normal((m, n))
    updates = idealized_updates(sigma**2 * np.eye(m * n), G, 0.5)
    norm = float(np.linalg.norm(G))
    expected = {
        "adam": norm / sigma,
        "eshampoo": norm / sigma,
        "shampoo": (m * n) ** -0.25 / sigma * norm,
    }
    errors = {
        name: abs(np.linalg.norm(getattr(updates, name)) / value - 1.0)
        for name, value in expected.items()
    }
    worst = max(errors.values())
    return _result(
        "iid_norm_equality", worst <= 1e-9, f"max relative error {worst:.3e}"
    )


def shampoo2_rank_one(cases: int = 20, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        m, n = (int(d) for d in rng.integers(1, 7, size=2))
        G = np.outer(rng.standard_normal(m), rng.standard_normal(n))
        left = ema_update(FactorState.initial(m), G @ G.T, 0.0)
        right = ema_update(FactorState.initial(n), G.T @ G, 0.0)
        C = shampoo_kron_preconditioner(
            left.stat, right.stat, squared=True, trace_scaled=True
        )
        g = vec(G)
        worst = max(worst, float(np.linalg.norm(C - np.outer(g, g))))
    return _result(
        "shampoo2_rank_one", worst <= 1e-10, f"max residual {worst:.3e}"
    )


def _sampled_covariance(dim, samples, rng):
    state = FullMatrixState.zeros(dim, "adagrad_sum")
    for _ in range(samples):
        full_update(state, rng.standard_normal(dim))
    return state.C / samples


def optimal_correction_check(
    cases: int = 50, perturbations: int = 1000, seed: int = 5
) -> CheckResult:
    """D* against perturbed diagonals, then the Shampoo residual ordering."""
    rng = np.random.default_rng(seed)
    beaten, worse_than_shampoo = 0, 0
    for _ in range(cases):
        C = random_spd(8, rng)
        Q = random_orthogonal(8, rng)
        D = optimal_correction(C, Q)
        best = np.linalg.norm(C - (Q * D) @ Q.T)
        deltas = rng.standard_normal((perturbations, 8)) * rng.uniform(
            1e-6, 1.0, (perturbations, 1)
        )
        candidates = np.einsum("ij,kj,lj->kil", Q, D + deltas, Q)
        residuals = np.linalg.norm(C - candidates, axis=(1, 2))
        beaten += int(np.sum(residuals < best - 1e-12))

        m, n = (int(d) for d in rng.integers(2, 6, size=2))
        C_full = _sampled_covariance(m * n, 3 * m * n, rng)
        L, R = partial_traces(C_full, m, n)
        Q_L, Q_R = sym_eig(L).basis, sym_eig(R).basis
        D_kron = unvec(
            optimal_correction(C_full, kron_basis(Q_L, Q_R)), (m, n)
        )
        report = frobenius_residuals(C_full, L, R, Q_L, Q_R, D_kron)
        if report.corrected > report.shampoo + 1e-12:
            worse_than_shampoo += 1
    return _result(
        "optimal_correction_check",
        beaten == 0 and worse_than_shampoo == 0,
        f"{beaten} better perturbations, "
        f"{worse_than_shampoo} cases worse than Shampoo",
    )


def grafting_identity(steps: int = 200, seed: int = 6) -> CheckResult:
    task = kron_quadratic(8, 6, seed=seed, noise=0.1)
    cfg = OptimizerConfig(
        "shampoo_grafted",
        schedule=ConstantSchedule(1e-2),
        max_preconditioner_dim=16,
        policy=RefreshPolicy("adaptive_eigh", 0.1, 10),
    )
    block = make_block("W", task.initial_params()[0], cfg)
    worst = 0.0
    for t in range(1, steps + 1):
        (G,) = task.grad([block.weight], batch_seed=t)
        before = block.weight.copy()
        report = step(block, G, cfg, t)
        applied = float(np.linalg.norm(block.weight - before))
        worst = max(
            worst,
            abs(report.update_norm - report.graft_norm),
            abs(applied - report.graft_norm),
        )
    return _result(
        "grafting_identity", worst <= 1e-12, f"max deviation {worst:.3e}"
    )


def _block_with_factors(cfg, L, R):
    block = make_block("w", np.zeros((len(L), len(R))), cfg)
    for side, stat in (("left", L), ("right", R)):
        eig = sym_eig(stat)
        state = FactorState.initial(eig.dim)
        state.stat = sym_matrix(stat)
        state.basis, state.basis_eigenvalues = eig.basis, eig.values
        state.eig_count = 1
        setattr(block, side, state)
    return block


def identity_basis_reduction(cases: int = 200, seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = OptimizerConfig(
        "eshampoo", beta2=0.9, epsilon=1e-8, max_preconditioner_dim=1
    )
    worst = 0.0
    for case in range(cases):
        m, n = 2 + case % 5, 2 + case % 3
        block = _block_with_factors(cfg, np.eye(m), np.eye(n))
        D = rng.uniform(0.0, 2.0, (m, n))
        G = rng.standard_normal((m, n))
        block.correction = D.copy()
        U = eshampoo_update(block, G, cfg)
        _, U_adam = adam_update(D, G, 0.9, 1e-8)
        worst = max(worst, float(np.max(np.abs(U - U_adam))))
    return _result(
        "identity_basis_reduction", worst <= 1e-12, f"max diff {worst:.3e}"
    )


def vec_equivalence(cases: int = 50, seed: int = 8) -> CheckResult:
    """Matrix-form updates against the explicit mn×mn preconditioner."""
    rng = np.random.default_rng(seed)

    def config(variant):
        return OptimizerConfig(
            variant, epsilon=0.0, beta2=0.7, max_preconditioner_dim=1
        )

    worst = {}
    for _ in range(cases):
        m, n = (int(d) for d in rng.integers(2, 7, size=2))
        L, R = random_spd(m, rng), random_spd(n, rng)
        G = rng.standard_normal((m, n))
        pairs = {}

        cfg = config("shampoo")
        pairs["shampoo"] = (
            shampoo_update(_block_with_factors(cfg, L, R), G, cfg),
            full_matrix_update(shampoo_kron_preconditioner(L, R), G),
        )

        cfg = config("shampoo2_trace")
        R_eq = R * np.trace(L) / np.trace(R)
        pairs["shampoo2_trace"] = (
            shampoo2_trace_update(_block_with_factors(cfg, L, R_eq), G, cfg),
            full_matrix_update(
                shampoo_kron_preconditioner(
                    L, R_eq, squared=True, trace_scaled=True
                ),
                G,
            ),
        )

        second = rng.uniform(0.1, 1.0, (m, n))
        D_adam, U_adam = adam_update(second, G, 0.7, 0.0)
        pairs["adam"] = (U_adam, full_matrix_update(np.diag(vec(D_adam)), G))

        cfg = config("shampoo_grafted")
        direction = full_matrix_update(shampoo_kron_preconditioner(L, R), G)
        U = graft_rescale(
            shampoo_update(_block_with_factors(cfg, L, R), G, cfg), U_adam
        )
        pairs["shampoo_grafted"] = (
            U,
            direction * np.linalg.norm(U_adam) / np.linalg.norm(direction),
        )

        cfg = config("eshampoo")
        block = _block_with_factors(cfg, L, R)
        block.correction = rng.uniform(0.1, 1.0, (m, n))
        U = eshampoo_update(block, G, cfg)
        K = kron_basis(block.left.basis, block.right.basis)
        C = (K * vec(block.correction)) @ K.T
        pairs["eshampoo"] = (U, full_matrix_update(C, G))

        for name, (actual, expected) in pairs.items():
            error = np.linalg.norm(actual - expected) / np.linalg.norm(
                expected
            )
            worst[name] = max(worst.get(name, 0.0), float(error))

    passed = all(error <= 1e-9 for error in worst.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in sorted(worst.items()))
    return _result("vec_equivalence", passed, detail)


def gradient_checks(points: int = 10, seed: int = 9) -> CheckResult:
    rng = np.random.default_rng(seed)
    tasks = (
        kron_quadratic(8, 6, seed=seed, noise=0.5),
        matrix_regression(5, 4, 30, seed=seed, batch_size=10),
        mlp_toy(hidden=16, seed=seed, num_points=512, batch_size=64),
    )
    worst = {}
    for task in tasks:
        for index in range(points):
            params = [0.5 * rng.standard_normal(s) for s in task.shapes]
            error = gradient_check(task, params, batch_seed=index + 1)
            worst[task.name] = max(worst.get(task.name, 0.0), error)
    passed = all(error <= 1e-5 for error in worst.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    return _result("gradient_checks", passed, detail)


def _mlp_config(name, seed, steps, optimizer, batch_size=128):
    return ExperimentConfig(
        name=name,
        seed=seed,
        steps=steps,
        task={
            "name": "mlp_toy",
            "seed": seed,
            "params": {"hidden": 32, "batch_size": batch_size},
        },
        optimizer=optimizer,
    )


def _final(summary) -> float:
    value = summary["final_loss"]
    return math.inf if value is None else value


def _tuned_lr(variant_config: Callable, steps: int) -> float:
    """Constant step size with the lowest final loss on seed 0."""
    configs = [
        _mlp_config(f"sweep-{lr}", 0, steps, variant_config(lr))
        for lr in LR_GRID
    ]
    comparison = compare_runs(configs, write=False)
    losses = [_final(row) for row in comparison.table]
    return LR_GRID[int(np.argmin(losses))]


def eshampoo_beats_shampoo(
    seeds: int = 3, steps: int = 2000, sweep_steps: Optional[int] = None
) -> CheckResult:
    """
    EShampoo (adaptive refresh every 10 steps) against Shampoo without
    grafting (fixed refresh every 100 steps), each at its best α.
    """

    def eshampoo(lr):
        return OptimizerConfig(
            "eshampoo",
            schedule=ConstantSchedule(lr),
            policy=RefreshPolicy("adaptive_eigh", 0.1, 10),
        )

    def shampoo(lr):
        return OptimizerConfig(
            "shampoo",
            schedule=ConstantSchedule(lr),
            epsilon=1e-6,
            policy=RefreshPolicy("fixed_eigh", frequency=100),
        )

    sweep_steps = sweep_steps or max(1, steps // 4)
    lrs = {
        "eshampoo": _tuned_lr(eshampoo, sweep_steps),
        "shampoo": _tuned_lr(shampoo, sweep_steps),
    }
    wins, outcomes = 0, []
    for seed in range(seeds):
        configs = [
            _mlp_config(name, seed, steps, build(lrs[name]))
            for name, build in (("eshampoo", eshampoo), ("shampoo", shampoo))
        ]
        comparison = compare_runs(configs, write=False)
        ours, theirs = (_final(row) for row in comparison.table)
        wins += ours <= theirs
        outcomes.append(f"seed {seed}: {ours:.4g} vs {theirs:.4g}")
    return _result(
        "eshampoo_beats_shampoo",
        wins * 3 >= 2 * seeds,
        f"lr {lrs}; " + "; ".join(outcomes),
    )


def front_loading_profile(seed: int, steps: int = 600, lr: float = 3e-3):
    """
    Per-third eigendecomposition counts of one adaptive EShampoo run.

    Returns:
        Tuple of (profile, run summary)
    """
    cfg = _mlp_config(
        f"profile-{seed}",
        seed,
        steps,
        OptimizerConfig(
            "eshampoo",
            schedule=ConstantSchedule(lr),
            policy=RefreshPolicy("adaptive_eigh", 0.01, 1),
        ),
    )
    result = run_experiment(cfg, write=False)
    return recompute_profile(result.rows, 3), result.summary


def recompute_front_loading(
    seeds: int = 3, steps: int = 600, lr: float = 3e-3
) -> CheckResult:
    """Adaptive refresh spends more eigendecompositions early than late."""
    holds, profiles = 0, []
    for seed in range(seeds):
        profile, _ = front_loading_profile(seed, steps, lr)
        holds += profile[0] >= profile[-1]
        profiles.append(profile)
    return _result(
        "recompute_front_loading",
        holds * 3 >= 2 * seeds,
        f"per-third recomputations {profiles}",
    )


CHECKS = {
    "stale_error_identity": stale_error_identity,
    "warm_qr_contract": warm_qr_contract,
    "norm_sandwich": norm_sandwich,
    "iid_norm_equality": iid_norm_equality,
    "shampoo2_rank_one": shampoo2_rank_one,
    "optimal_correction_check": optimal_correction_check,
    "grafting_identity": grafting_identity,
    "identity_basis_reduction": identity_basis_reduction,
    "vec_equivalence": vec_equivalence,
    "gradient_checks": gradient_checks,
}

DIRECTIONAL_CHECKS = {
    "eshampoo_beats_shampoo": eshampoo_beats_shampoo,
    "recompute_front_loading": recompute_front_loading,
}


def run_suite(names=None, directional: bool = False) -> list[CheckResult]:
    """
    Run the selected checks in registry order.

    A check that raises is reported as failed with the error text.

    Raises:
        ValueError: unknown check name
    """
    available = dict(CHECKS)
    if directional:
        available.update(DIRECTIONAL_CHECKS)
    if names:
        everything = {**CHECKS, **DIRECTIONAL_CHECKS}
        unknown = sorted(set(names) - set(everything))
        if unknown:
            raise ValueError(f"unknown checks: {', '.join(unknown)}")
        available = {k: v for k, v in everything.items() if k in names}

    results = []
    for name, check in available.items():
        logger.info("running check %s", name)
        try:
            result = check()
        except (ArithmeticError, ValueError) as exc:
            result = CheckResult(name, False, f"{type(exc).__name__}: {exc}")
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, "%s: %s", name, result.detail)
        results.append(result)
    return results
