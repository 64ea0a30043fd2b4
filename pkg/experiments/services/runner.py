"""
Seeded training runs, their artifacts and side-by-side comparisons.

A run validates its JSON config, builds the task and one optimizer
block per parameter, then steps every block once per iteration. The
loss recorded for step t is the full-batch loss before the t-th
update; stochastic tasks draw the step's gradient with batch seed
`seed * 1_000_000 + t`.
"""

import contextlib
import csv
import dataclasses
import json
import logging
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings

from experiments.exceptions import ConfigError
from experiments.serializers import ExperimentConfigSerializer
from experiments.services.telemetry import (
    TelemetryWriter,
    recompute_profile,
    rows_for_step,
)
from factor_state.services.factors import RefreshPolicy
from optimizers.exceptions import NonFiniteUpdate
from optimizers.services.blocks import OptimizerConfig, make_block, step
from optimizers.services.schedules import build_schedule
from oracle.exceptions import SizeGuard
from tasks.services.problems import build_task

logger = logging.getLogger(__name__)

BATCH_SEED_STRIDE = 1_000_000

STATUS_COMPLETED = "completed"
STATUS_DIVERGED = "diverged"

COMPARISON_COLUMNS = (
    "name",
    "variant",
    "seed",
    "status",
    "final_loss",
    "steps_to_target",
    "wall_time_s",
    "total_eig_count",
    "total_qr_iters",
)


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    steps: int
    task: dict
    optimizer: OptimizerConfig
    telemetry_every: int = 1
    target_loss: Optional[float] = None
    output_dir: Optional[Path] = None
    data: dict = field(default_factory=dict)

    @property
    def variant(self) -> str:
        return self.optimizer.variant.value


@dataclass
class RunResult:
    summary: dict
    rows: list


@dataclass
class Comparison:
    table: list
    results: list


def parse_config(data: dict) -> ExperimentConfig:
    """
    Validate a config document and build the runtime objects.

    Raises:
        ConfigError: with the serializer's error dictionary
    """
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError("invalid experiment config", serializer.errors)
    valid = json.loads(json.dumps(serializer.validated_data))

    schedule = valid["schedule"]
    opt = dict(valid["optimizer"])
    try:
        policy = RefreshPolicy(**opt.pop("policy"))
        optimizer = OptimizerConfig(
            schedule=build_schedule(
                schedule["kind"],
                schedule["lr"],
                schedule["warmup_steps"],
                schedule["total_steps"] or valid["steps"],
            ),
            policy=policy,
            **opt,
        )
    except ValueError as exc:
        raise ConfigError(
            "invalid experiment config", {"optimizer": [str(exc)]}
        ) from exc

    output_dir = valid.get("output_dir")
    return ExperimentConfig(
        name=valid["name"],
        seed=valid["seed"],
        steps=valid["steps"],
        task=valid["task"],
        optimizer=optimizer,
        telemetry_every=valid["telemetry_every"],
        target_loss=valid["target_loss"],
        output_dir=Path(output_dir) if output_dir else None,
        data=valid,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)


def default_output_dir(cfg: ExperimentConfig) -> Path:
    return Path(settings.KRONOPT_OUTPUT_DIR) / cfg.name


def _finite_or_none(value):
    return value if value is not None and math.isfinite(value) else None


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunResult:
    """
    Execute one seeded run.

    With `write=True` the telemetry CSV and the summary JSON go to the
    config's output directory (KRONOPT_OUTPUT_DIR/<name> by default).
    A non-finite loss or a NonFiniteUpdate ends the run with status
    "diverged", the offending step in `aborted_at_step` and no final
    loss.

    Raises:
        ConfigError: the optimizer cannot be built for the task
    """
    task = build_task(cfg.task)
    opt = cfg.optimizer
    try:
        blocks = [
            make_block(name, param, opt)
            for name, param in zip(task.param_names, task.initial_params())
        ]
    except SizeGuard as exc:
        raise ConfigError(str(exc), {"optimizer": [str(exc)]}) from exc

    out_dir = (cfg.output_dir or default_output_dir(cfg)) if write else None
    logger.info(
        "run %s: %s on %s for %d steps",
        cfg.name,
        cfg.variant,
        task.name,
        cfg.steps,
    )

    progress = _Progress()
    started = time.perf_counter()
    sink = (
        TelemetryWriter(out_dir / "telemetry.csv")
        if write
        else contextlib.nullcontext()
    )
    with sink as writer:
        _train(cfg, task, blocks, progress, writer)

    # a block failing mid-step leaves the others already updated
    final_loss = (
        task.loss([block.weight for block in blocks])
        if progress.status == STATUS_COMPLETED
        else None
    )
    if (
        progress.steps_to_target is None
        and cfg.target_loss is not None
        and progress.status == STATUS_COMPLETED
        and final_loss <= cfg.target_loss
    ):
        progress.steps_to_target = progress.completed

    summary = _summary(
        cfg,
        task.name,
        blocks,
        progress,
        final_loss=final_loss,
        wall_time_s=time.perf_counter() - started,
    )
    if write:
        summary["telemetry_path"] = str(out_dir / "telemetry.csv")
        summary["summary_path"] = str(out_dir / "summary.json")
        Path(summary["summary_path"]).write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n"
        )
        logger.info("wrote summary to %s", summary["summary_path"])
    logger.info(
        "run %s %s after %d steps, final loss %s",
        cfg.name,
        progress.status,
        progress.completed,
        summary["final_loss"],
    )
    return RunResult(summary=summary, rows=progress.rows)


@dataclass
class _Progress:
    status: str = STATUS_COMPLETED
    completed: int = 0
    aborted_at: Optional[int] = None
    initial_loss: Optional[float] = None
    steps_to_target: Optional[int] = None
    rows: list = field(default_factory=list)


def _train(cfg, task, blocks, progress, writer):
    opt = cfg.optimizer
    for t in range(1, cfg.steps + 1):
        tick = time.perf_counter()
        params = [block.weight for block in blocks]
        loss = task.loss(params)
        if progress.initial_loss is None:
            progress.initial_loss = loss
        if not math.isfinite(loss):
            logger.warning("run %s: non-finite loss at step %d", cfg.name, t)
            progress.status, progress.aborted_at = STATUS_DIVERGED, t
            return
        if (
            progress.steps_to_target is None
            and cfg.target_loss is not None
            and loss <= cfg.target_loss
        ):
            # updates taken before the target was first reached
            progress.steps_to_target = t - 1

        batch_seed = cfg.seed * BATCH_SEED_STRIDE + t
        grads = task.grad(params, batch_seed if task.stochastic else None)
        grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        try:
            reports = [
                step(block, g, opt, t) for block, g in zip(blocks, grads)
            ]
        except NonFiniteUpdate as exc:
            logger.warning("run %s diverged: %s", cfg.name, exc)
            progress.status, progress.aborted_at = STATUS_DIVERGED, exc.step
            return
        progress.completed = t

        if t % cfg.telemetry_every == 0:
            wall_ms = 1000.0 * (time.perf_counter() - tick)
            step_rows = rows_for_step(t, loss, grad_norm, reports, wall_ms)
            progress.rows.extend(step_rows)
            if writer is not None:
                writer.write(step_rows)


def _summary(cfg, task_name, blocks, progress, final_loss, wall_time_s):
    eig_counts, qr_iters = {}, {}
    for block in blocks:
        for label, factor in block.factors().items():
            key = f"{block.name}.{label}"
            eig_counts[key] = factor.eig_count
            qr_iters[key] = factor.qr_iter_count
    vector_blocks = {b.name for b in blocks if b.is_vector}
    return {
        "name": cfg.name,
        "task": task_name,
        "variant": cfg.variant,
        "seed": cfg.seed,
        "status": progress.status,
        "steps": cfg.steps,
        "steps_completed": progress.completed,
        "aborted_at_step": progress.aborted_at,
        "initial_loss": _finite_or_none(progress.initial_loss),
        "final_loss": _finite_or_none(final_loss),
        "target_loss": cfg.target_loss,
        "steps_to_target": progress.steps_to_target,
        "eig_counts": eig_counts,
        "qr_iters": qr_iters,
        "total_eig_count": sum(eig_counts.values()),
        "total_qr_iters": sum(qr_iters.values()),
        "recompute_profile": recompute_profile(
            progress.rows, 3, vector_blocks=vector_blocks
        ),
        "wall_time_s": wall_time_s,
        "telemetry_path": None,
        "summary_path": None,
    }


def _task_key(cfg: ExperimentConfig):
    params = dict(cfg.task.get("params") or {})
    params.pop("batch_size", None)
    return cfg.task["name"], json.dumps(params, sort_keys=True)


def thread_cap() -> int:
    """KRONOPT_THREADS as a positive integer."""
    raw = settings.KRONOPT_THREADS
    try:
        threads = int(raw)
    except (TypeError, ValueError):
        threads = 0
    if threads < 1:
        raise ConfigError(
            "invalid KRONOPT_THREADS",
            {"KRONOPT_THREADS": [f"expected a positive integer, got {raw!r}"]},
        )
    return threads


def _member_configs(configs):
    """Give runs that would share an output directory one each."""
    dirs = [cfg.output_dir or default_output_dir(cfg) for cfg in configs]
    shared = Counter(path.resolve() for path in dirs)
    return [
        dataclasses.replace(
            cfg,
            output_dir=(
                path / f"{index}-{cfg.name}"
                if shared[path.resolve()] > 1
                else path
            ),
        )
        for index, (cfg, path) in enumerate(zip(configs, dirs))
    ]


def compare_runs(configs, write: bool = True) -> Comparison:
    """
    Run configs that share a task and tabulate their summaries.

    Member runs execute on up to KRONOPT_THREADS threads; the row order
    follows the config order. Runs that would write to the same output
    directory get the subdirectory `<index>-<name>` of it instead.

    Raises:
        ConfigError: empty list, configs naming different tasks, or a
            bad KRONOPT_THREADS value
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("compare_runs needs at least one config")
    keys = {_task_key(cfg) for cfg in configs}
    if len(keys) > 1:
        raise ConfigError(
            "configs must share the task",
            {"task": sorted(f"{name} {params}" for name, params in keys)},
        )

    workers = min(thread_cap(), len(configs))
    if write:
        configs = _member_configs(configs)
    logger.info("comparing %d runs on %d threads", len(configs), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(lambda cfg: run_experiment(cfg, write=write), configs)
        )
    table = [
        {column: result.summary[column] for column in COMPARISON_COLUMNS}
        for result in results
    ]
    return Comparison(table=table, results=results)


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def format_table(table: list[dict]) -> str:
    """Aligned plain-text rendering of a comparison table."""
    cells = [list(COMPARISON_COLUMNS)] + [
        [_cell(row[c]) for c in COMPARISON_COLUMNS] for row in table
    ]
    widths = [max(len(cell) for cell in column) for column in zip(*cells)]
    return "\n".join(
        "  ".join(value.ljust(width) for value, width in zip(line, widths))
        .rstrip()
        for line in cells
    )


def write_comparison_csv(path, table: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=COMPARISON_COLUMNS)
        writer.writeheader()
        for row in table:
            writer.writerow(
                {k: "" if v is None else v for k, v in row.items()}
            )
    logger.info("wrote comparison of %d runs to %s", len(table), path)
    return path
