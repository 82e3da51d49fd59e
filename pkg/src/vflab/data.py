"""Datasets: a validated container, a Gaussian-blob generator, and CSV loading.

Features are always scaled to [0, 1]; reconstruction error against a
bounded box is what makes attack MSE comparable across tasks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Raised for malformed input data files, with row/column diagnostics."""


@dataclass
class Dataset:
    """Feature matrix (n, d) scaled to [0, 1], integer labels 0..K-1, and
    named row splits (both 'train' and 'test' must be present)."""

    features: np.ndarray
    labels: np.ndarray
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} does not match {n} rows")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if np.min(self.features) < 0.0 or np.max(self.features) > 1.0:
            raise ValueError("features must lie in [0, 1]")
        if np.min(self.labels) < 0:
            raise ValueError("labels must be non-negative")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        for name in ("train", "test"):
            if name not in self.splits:
                raise ValueError(f"missing split {name!r}")
        for name, idx in self.splits.items():
            idx = np.asarray(idx, dtype=np.int64)
            if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= n)):
                raise ValueError(f"split {name!r} holds out-of-range row indices")
            self.splits[name] = idx

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Feature and label views for one named split."""
        idx = self.splits[name]
        return self.features[idx], self.labels[idx]


def _min_max_scale(features: np.ndarray) -> np.ndarray:
    lo = features.min(axis=0)
    span = features.max(axis=0) - lo
    span = np.where(span == 0.0, 1.0, span)  # constant columns map to 0
    return (features - lo) / span


def make_synthetic(
    classes: int,
    dims: int,
    samples: int,
    margin: float,
    seed: int,
    *,
    spread: float = 0.04,
    test_fraction: float = 0.25,
) -> Dataset:
    """Gaussian blobs with near-even labels, min-max scaled to [0, 1].

    Class centers are rejection-sampled inside [0.1, 0.9]^dims until every
    pair is at least ``margin`` apart; rows get labels round-robin, so the
    label histogram is even to within one count. Deterministic per seed.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if samples < classes:
        raise ValueError(f"need at least one sample per class, got {samples}")
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)

    centers = np.empty((classes, dims))
    for i in range(classes):
        for _ in range(10_000):
            cand = rng.uniform(0.1, 0.9, dims)
            if i == 0 or np.min(np.linalg.norm(centers[:i] - cand, axis=1)) >= margin:
                centers[i] = cand
                break
        else:
            raise ValueError(f"cannot place {classes} centers with margin {margin} in {dims} dims")

    labels = np.arange(samples, dtype=np.int64) % classes
    features = centers[labels] + rng.normal(0.0, spread, (samples, dims))
    features = _min_max_scale(features)

    order = rng.permutation(samples)
    features, labels = features[order], labels[order]
    n_test = max(1, int(round(samples * test_fraction)))
    splits = {"train": np.arange(samples - n_test), "test": np.arange(samples - n_test, samples)}
    return Dataset(features=features, labels=labels, splits=splits)


def load_csv(path: str | Path, *, test_fraction: float = 0.25, seed: int = 0) -> Dataset:
    """Load a header-ed CSV with a ``label`` column and numeric features.

    Features are min-max scaled to [0, 1]; rows are shuffled (seeded) into
    train/test splits. Non-numeric or non-finite cells raise
    DataFormatError naming the offending row and column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty") from None
        header = [name.strip() for name in header]
        if "label" not in header:
            raise DataFormatError(f"{path}: no 'label' column in header {header}")
        label_pos = header.index("label")
        feature_names = [name for i, name in enumerate(header) if i != label_pos]
        if not feature_names:
            raise DataFormatError(f"{path}: no feature columns besides 'label'")

        rows: list[list[float]] = []
        labels: list[int] = []
        for row_num, row in enumerate(reader, start=2):  # 1-based, after header
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
            parsed: list[float] = []
            for pos, cell in enumerate(row):
                name = header[pos]
                try:
                    value = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {row_num}, column {name!r}: cannot parse {cell!r} as a number"
                    ) from None
                if not np.isfinite(value):
                    raise DataFormatError(f"{path}: row {row_num}, column {name!r}: non-finite value {cell!r}")
                if pos == label_pos:
                    if value != int(value) or value < 0:
                        raise DataFormatError(
                            f"{path}: row {row_num}, column 'label': {cell!r} is not a class index"
                        )
                    labels.append(int(value))
                else:
                    parsed.append(value)
            rows.append(parsed)

    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    features = _min_max_scale(np.array(rows, dtype=np.float64))
    labels_arr = np.array(labels, dtype=np.int64)

    n = len(rows)
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    splits = {"train": order[: n - n_test], "test": order[n - n_test :]}
    return Dataset(features=features, labels=labels_arr, splits=splits)
