"""Confidence-score containers, ranking, and orthonormal score transforms.

A coordinator in a vertical federated deployment broadcasts one confidence
vector per inference. Everything downstream (defenses, attacks, accuracy
bookkeeping) treats that vector through the small vocabulary defined here:
a validated probability vector, its descending-confidence ranking, and a
family of orthonormal linear maps used as the deterministic part of the
score defense.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ConfidenceVector:
    """Class-membership scores for one sample: non-negative, summing to one.

    Parameters
    ----------
    values : np.ndarray
        Length-K vector, K >= 2. Entries must be >= 0 and sum to 1 within
        ``SUM_TOLERANCE`` (absolute). The array is copied and frozen.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        if values.ndim != 1:
            raise ValueError(f"confidence vector must be 1-D, got shape {values.shape}")
        if values.shape[0] < 2:
            raise ValueError(f"need at least 2 classes, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("confidence vector contains non-finite entries")
        if np.min(values) < 0.0:
            raise ValueError(f"negative confidence entry: {np.min(values)}")
        total = float(np.sum(values))
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ValueError(f"confidence entries sum to {total!r}, expected 1 within {SUM_TOLERANCE}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        """Number of classes."""
        return self.values.shape[0]


@dataclass(frozen=True)
class RankVector:
    """Descending-confidence ranks: a permutation of 1..K, 1 = most confident."""

    ranks: np.ndarray

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=np.int64).copy()
        if ranks.ndim != 1 or ranks.shape[0] < 2:
            raise ValueError(f"rank vector must be 1-D with K >= 2, got shape {ranks.shape}")
        k = ranks.shape[0]
        if not np.array_equal(np.sort(ranks), np.arange(1, k + 1)):
            raise ValueError("ranks must be a permutation of 1..K")
        ranks.flags.writeable = False
        object.__setattr__(self, "ranks", ranks)

    @property
    def k(self) -> int:
        return self.ranks.shape[0]


@dataclass(frozen=True)
class TransformedScores:
    """Output of a score transform or defense.

    Carries plain reals: unlike ConfidenceVector there is no simplex
    constraint, and order relative to the source is a property of the
    producing transform, not of this container.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        if values.ndim != 1:
            raise ValueError(f"transformed scores must be 1-D, got shape {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.values.shape[0]


class TransformKind(Enum):
    """Orthonormal maps applied to a confidence vector before noise is added.

    IDENTITY leaves scores untouched. REFLECTION is the Householder
    reflection about the all-ones direction, A = I - (2/K) * ones * ones^T:
    orthonormal, order-preserving, and applicable in O(K) without ever
    materializing the matrix.
    """

    IDENTITY = "identity"
    REFLECTION = "reflection"


def _rank_values(values: np.ndarray) -> np.ndarray:
    """Ranks 1..K, descending by value; ties broken by ascending index."""
    # stable argsort on the negated values keeps equal entries in index order
    order = np.argsort(-values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, values.shape[0] + 1)
    return ranks


def rank(c: ConfidenceVector) -> RankVector:
    """Rank classes by confidence: r_i < r_j exactly when c_i > c_j.

    Ties take ascending class index, so the result is always a permutation
    of 1..K and re-ranking any strictly monotone transform of ``c`` gives
    the same answer.

    Examples
    --------
    >>> rank(ConfidenceVector(np.array([0.2, 0.5, 0.3]))).ranks
    array([3, 1, 2])
    """
    return RankVector(_rank_values(c.values))


def _transform_values(kind: TransformKind, values: np.ndarray) -> np.ndarray:
    if kind is TransformKind.IDENTITY:
        return values.copy()
    if kind is TransformKind.REFLECTION:
        k = values.shape[0]
        # A c = c - (2/K) * (sum c) * ones, computed without the K x K matrix
        return values - (2.0 / k) * values.sum()
    raise ValueError(f"unknown transform kind: {kind!r}")


def apply_transform(kind: TransformKind, c: ConfidenceVector) -> TransformedScores:
    """Apply the orthonormal map for ``kind`` to ``c`` in O(K).

    Both kinds preserve pairwise Euclidean distances exactly and preserve
    the descending order of entries (the reflection shifts every entry by
    the same constant).
    """
    return TransformedScores(_transform_values(kind, c.values))


def transform_matrix(kind: TransformKind, k: int) -> np.ndarray:
    """Materialize the K x K matrix for ``kind`` (diagnostics and tests only)."""
    if k < 2:
        raise ValueError(f"need K >= 2, got {k}")
    if kind is TransformKind.IDENTITY:
        return np.eye(k)
    if kind is TransformKind.REFLECTION:
        return np.eye(k) - (2.0 / k) * np.ones((k, k))
    raise ValueError(f"unknown transform kind: {kind!r}")


def orthonormality_residual(kind: TransformKind, k: int) -> float:
    """Max-abs entry of A^T A - I for the realized matrix; 0 for an exact isometry."""
    a = transform_matrix(kind, k)
    return float(np.max(np.abs(a.T @ a - np.eye(k))))
