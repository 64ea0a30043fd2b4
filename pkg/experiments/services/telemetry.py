"""
Per-step, per-factor telemetry rows and their CSV form.

One row is written per factor of every block (Adam blocks, which hold
no factors, get a single row with factor "-"). Counters in the
`eig_count` column are cumulative, so the recomputations that happened
between two rows are the difference of their counts.
"""

import csv
import logging
from collections import defaultdict
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

NO_FACTOR = "-"
ZERO_UPDATE = "ZeroUpdate"


@dataclass(frozen=True)
class TelemetryRow:
    step: int
    loss: float
    grad_norm: float
    block: str
    factor: str
    criterion: Optional[float]
    decision: str
    qr_iters: int
    eig_count: Optional[int]
    update_norm: float
    graft_norm: Optional[float]
    wall_ms: float


CSV_HEADER = tuple(f.name for f in fields(TelemetryRow))

_INT_COLUMNS = {"step", "qr_iters", "eig_count"}
_FLOAT_COLUMNS = {
    "loss",
    "grad_norm",
    "criterion",
    "update_norm",
    "graft_norm",
    "wall_ms",
}


def _decision_text(label: str, zero_update: bool) -> str:
    labels = [label] if label else []
    if zero_update:
        labels.append(ZERO_UPDATE)
    return "+".join(labels)


def rows_for_step(step, loss, grad_norm, reports, wall_ms):
    """Flatten the block reports of one optimizer step into rows."""
    rows = []
    for report in reports:
        common = dict(
            step=step,
            loss=loss,
            grad_norm=grad_norm,
            block=report.block,
            update_norm=report.update_norm,
            graft_norm=report.graft_norm,
            wall_ms=wall_ms,
        )
        if not report.factors:
            rows.append(
                TelemetryRow(
                    factor=NO_FACTOR,
                    criterion=None,
                    decision=_decision_text("", report.zero_update),
                    qr_iters=0,
                    eig_count=None,
                    **common,
                )
            )
            continue
        for label, factor in report.factors.items():
            decision = report.decisions[label]
            rows.append(
                TelemetryRow(
                    factor=label,
                    criterion=decision.criterion,
                    decision=_decision_text(
                        decision.label, report.zero_update
                    ),
                    qr_iters=decision.qr_iters,
                    eig_count=factor.eig_count,
                    **common,
                )
            )
    return rows


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _parse(column: str, text: str):
    if column in _INT_COLUMNS:
        return int(text) if text else None
    if column in _FLOAT_COLUMNS:
        return float(text) if text else None
    return text


class TelemetryWriter:
    """Single-writer CSV sink; use as a context manager."""

    def __init__(self, path):
        self.path = Path(path)
        self.rows_written = 0
        self._handle = None
        self._writer = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = self.path.open("w", newline="")
        self._writer = csv.writer(self._handle)
        self._writer.writerow(CSV_HEADER)
        return self

    def write(self, rows: Iterable[TelemetryRow]):
        for row in rows:
            self._writer.writerow([_format(v) for v in astuple(row)])
            self.rows_written += 1

    def __exit__(self, exc_type, exc, tb):
        self._handle.close()
        logger.info(
            "wrote %d telemetry rows to %s", self.rows_written, self.path
        )
        return False


def read_telemetry(path) -> list[TelemetryRow]:
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected telemetry header")
        return [
            TelemetryRow(**{k: _parse(k, v) for k, v in record.items()})
            for record in reader
        ]


def recompute_profile(rows, segments: int = 3, vector_blocks=None):
    """
    Full eigendecompositions per training segment.

    Steps 1..T are cut into `segments` equal parts and every increase of
    a factor's cumulative eig_count is charged to the segment of the row
    that reveals it. Without `vector_blocks` the result is one list of
    per-segment totals over all factors; with a set of vector block
    names it is {"matrix": [...], "vector": [...]}.
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    counted = sorted(
        (r for r in rows if r.eig_count is not None),
        key=lambda r: r.step,
    )
    groups = ("all",) if vector_blocks is None else ("matrix", "vector")
    profile = {group: [0] * segments for group in groups}
    if not counted:
        return profile["all"] if vector_blocks is None else profile

    total_steps = counted[-1].step
    previous = defaultdict(int)
    for row in counted:
        key = (row.block, row.factor)
        increment = row.eig_count - previous[key]
        previous[key] = row.eig_count
        segment = min(segments - 1, (row.step - 1) * segments // total_steps)
        if vector_blocks is None:
            group = "all"
        elif row.block in vector_blocks:
            group = "vector"
        else:
            group = "matrix"
        profile[group][segment] += increment

    return profile["all"] if vector_blocks is None else profile
