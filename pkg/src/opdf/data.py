"""Synthetic classification tasks and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, NonNumericFeature, ParseError, UnknownGenerator
from .rng import Rng64

GENERATORS = ("gaussian-blobs", "two-spirals")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]

    @property
    def class_count(self) -> int:
        return int(max(self.y_train.max(), self.y_eval.max())) + 1


def standardize(x_train: np.ndarray, x_eval: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero mean, unit variance using train statistics only."""
    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (x_train - mean) / std, (x_eval - mean) / std


def _blobs(n: int, rng: Rng64, classes: int, dim: int, sigma: float, radius: float):
    # centers evenly spaced on a circle in the first two coordinates
    angles = 2.0 * math.pi * np.arange(classes) / classes
    centers = np.zeros((classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    if dim > 1:
        centers[:, 1] = radius * np.sin(angles)
    y = (np.arange(n) % classes)[rng.child("labels").permutation(n)]
    x = centers[y] + sigma * rng.child("noise").normal((n, dim))
    return x, y


def _spirals(n: int, rng: Rng64, classes: int, turns: float, noise: float):
    y = (np.arange(n) % classes)[rng.child("labels").permutation(n)]
    t = np.sqrt(rng.child("radius").uniform(n))  # uniform over the disc area
    angle = 2.0 * math.pi * turns * t + 2.0 * math.pi * y / classes
    x = np.stack([t * np.cos(angle), t * np.sin(angle)], axis=1)
    x = x + noise * rng.child("noise").normal((n, 2))
    return x, y


def gen_dataset(spec: dict, rng: Rng64) -> Dataset:
    """Generate, split, and standardize a synthetic task.

    ``spec`` holds ``generator`` plus generator parameters: ``n_train``, ``n_eval``,
    ``classes`` and, for blobs, ``dim``/``sigma``/``radius``; for spirals,
    ``turns``/``noise``.
    """
    spec = dict(spec)
    name = spec.pop("generator", None)
    n_train = int(spec.pop("n_train", 2000))
    n_eval = int(spec.pop("n_eval", 500))
    classes = int(spec.pop("classes", 3 if name == "gaussian-blobs" else 2))
    if classes < 2:
        raise ValueError("class count must be >= 2")
    n = n_train + n_eval
    if name == "gaussian-blobs":
        x, y = _blobs(
            n, rng, classes,
            dim=int(spec.pop("dim", 2)),
            sigma=float(spec.pop("sigma", 1.0)),
            radius=float(spec.pop("radius", 1.0)),
        )
    elif name == "two-spirals":
        x, y = _spirals(
            n, rng, classes,
            turns=float(spec.pop("turns", 1.5)),
            noise=float(spec.pop("noise", 0.02)),
        )
    else:
        raise UnknownGenerator(f"unknown generator {name!r}; expected one of {GENERATORS}")
    if spec:
        raise ValueError(f"unknown generator parameters: {sorted(spec)}")
    x_train, x_eval = standardize(x[:n_train], x[n_train:])
    return Dataset(x_train, y[:n_train].astype(np.int64), x_eval, y[n_train:].astype(np.int64))


def write_csv(path, x: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(x.shape[1])] + ["label"])
        for row, label in zip(x, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a header-first CSV whose last column is an integer label.

    Values are returned as written; standardization is left to :func:`standardize`.
    Error locations are 1-based file rows (the header is row 1) and columns.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyDataset(f"{path}: empty file")
    width = len(rows[0])
    if width < 2:
        raise ParseError(f"{path}: need at least one feature and a label column", row=1)
    feats, labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ParseError(f"{path}: row {r} has {len(row)} fields, expected {width}", row=r)
        values = []
        for c, cell in enumerate(row[:-1], start=1):
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericFeature(
                    f"{path}: row {r}, column {c}: non-numeric feature {cell!r}", row=r, column=c
                ) from None
            if not math.isfinite(v):
                raise NonNumericFeature(f"{path}: row {r}, column {c}: non-finite value", row=r, column=c)
            values.append(v)
        try:
            label = int(row[-1])
        except ValueError:
            raise ParseError(
                f"{path}: row {r}, column {width}: label {row[-1]!r} is not an integer", row=r, column=width
            ) from None
        if label < 0:
            raise ParseError(f"{path}: row {r}, column {width}: negative label", row=r, column=width)
        feats.append(values)
        labels.append(label)
    if not feats:
        raise EmptyDataset(f"{path}: no data rows")
    return np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64)


def csv_dataset(train_path, eval_path=None, eval_fraction: float = 0.2, rng: Rng64 | None = None) -> Dataset:
    x, y = load_csv(train_path)
    if eval_path is not None:
        x_eval, y_eval = load_csv(eval_path)
        x_train, y_train = x, y
    else:
        order = (rng or Rng64(0)).child("split").permutation(len(y))
        n_eval = max(1, int(round(eval_fraction * len(y))))
        if n_eval >= len(y):
            raise EmptyDataset(f"{train_path}: too few rows to split off an eval set")
        ev, tr = order[:n_eval], order[n_eval:]
        x_train, y_train, x_eval, y_eval = x[tr], y[tr], x[ev], y[ev]
    if x_eval.shape[1] != x_train.shape[1]:
        raise ParseError(f"{eval_path}: feature count differs from {train_path}")
    x_train, x_eval = standardize(x_train, x_eval)
    return Dataset(x_train, y_train, x_eval, y_eval)
