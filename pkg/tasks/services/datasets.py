"""
Seeded 2D Gaussian-mixture classification data and its CSV form.

CSV layout: header `x1,x2,label`, one point per row.
"""

import csv
import logging
from pathlib import Path

import numpy as np

from tasks.exceptions import DatasetFormatError

logger = logging.getLogger(__name__)

CSV_HEADER = ("x1", "x2", "label")

# Class centres sit on a circle of this radius around the origin.
CENTRE_RADIUS = 2.5


def gaussian_mixture(num_points: int, num_classes: int, seed: int):
    """
    Balanced mixture of `num_classes` isotropic Gaussians.

    Returns:
        Tuple of (points (N×2 float64), labels (N int64))
    """
    if num_points < num_classes or num_classes < 2:
        raise ValueError("need num_classes >= 2 and a point per class")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(num_points) % num_classes)
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centres = CENTRE_RADIUS * np.column_stack(
        [np.cos(angles), np.sin(angles)]
    )
    points = centres[labels] + rng.standard_normal((num_points, 2))
    return points, labels.astype(np.int64)


def export_dataset_csv(path, points, labels) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER)
        for (x1, x2), label in zip(points, labels):
            writer.writerow([repr(float(x1)), repr(float(x2)), int(label)])
    logger.info("wrote %d points to %s", len(labels), path)
    return path


def load_dataset_csv(path):
    """
    Read a dataset written by export_dataset_csv.

    Raises:
        DatasetFormatError: wrong header, bad numbers or negative labels
    """
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DatasetFormatError(
                f"{path}: expected header {','.join(CSV_HEADER)}"
            )
        points, labels = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                x1, x2, label = row
                points.append((float(x1), float(x2)))
                labels.append(int(label))
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{line}: {exc}") from exc

    if not labels:
        raise DatasetFormatError(f"{path}: no data rows")
    points = np.array(points, dtype=np.float64)
    labels = np.array(labels, dtype=np.int64)
    if labels.min() < 0:
        raise DatasetFormatError(f"{path}: labels must be nonnegative")
    if not np.all(np.isfinite(points)):
        raise DatasetFormatError(f"{path}: non-finite coordinates")
    return points, labels
