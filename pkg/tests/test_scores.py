"""Tests for confidence-score containers, ranking, and orthonormal transforms.

Hand-derived expected values are frozen inline; properties that must hold
for all inputs are checked over seeded random instances.
"""

import numpy as np
import pytest

from vflab.scores import (
    SUM_TOLERANCE,
    ConfidenceVector,
    RankVector,
    TransformKind,
    TransformedScores,
    apply_transform,
    orthonormality_residual,
    rank,
    transform_matrix,
)


def _rank_by_double_loop(values):
    """Independent oracle: rank = 1 + number of strictly larger entries,
    plus the number of equal entries at a smaller index."""
    k = len(values)
    ranks = np.zeros(k, dtype=np.int64)
    for i in range(k):
        r = 1
        for j in range(k):
            if values[j] > values[i]:
                r += 1
            elif values[j] == values[i] and j < i:
                r += 1
        ranks[i] = r
    return ranks


class TestConfidenceVector:
    def test_valid_vector_round_trips(self):
        c = ConfidenceVector(np.array([0.2, 0.5, 0.3]))
        np.testing.assert_array_equal(c.values, [0.2, 0.5, 0.3])
        assert c.k == 3

    def test_accepts_lists(self):
        assert ConfidenceVector([0.5, 0.5]).k == 2

    def test_input_array_is_copied(self):
        source = np.array([0.4, 0.6])
        c = ConfidenceVector(source)
        source[0] = 99.0
        np.testing.assert_array_equal(c.values, [0.4, 0.6])

    def test_values_are_read_only(self):
        c = ConfidenceVector([0.5, 0.5])
        with pytest.raises(ValueError):
            c.values[0] = 0.9

    def test_rejects_2d(self):
        with pytest.raises(ValueError, match="1-D"):
            ConfidenceVector(np.ones((2, 2)) / 4)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError, match="at least 2"):
            ConfidenceVector([1.0])

    def test_rejects_negative_entries(self):
        with pytest.raises(ValueError, match="negative"):
            ConfidenceVector([-0.1, 1.1])

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError, match="sum"):
            ConfidenceVector([0.3, 0.3])

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            ConfidenceVector([np.nan, 1.0])

    def test_sum_tolerance_is_absolute(self):
        ConfidenceVector([0.5, 0.5 + 0.5 * SUM_TOLERANCE])  # inside
        with pytest.raises(ValueError):
            ConfidenceVector([0.5, 0.5 + 3.0 * SUM_TOLERANCE])  # outside

    def test_zero_entries_are_allowed(self):
        assert ConfidenceVector([0.0, 1.0]).k == 2


class TestRankVector:
    def test_permutation_required(self):
        RankVector([2, 1, 3])
        with pytest.raises(ValueError, match="permutation"):
            RankVector([1, 1, 3])

    def test_rejects_zero_based(self):
        with pytest.raises(ValueError, match="permutation"):
            RankVector([0, 1, 2])


class TestRank:
    def test_frozen_example(self):
        """[0.2, 0.5, 0.3] ranks as [3, 1, 2]: 0.5 is the most confident."""
        c = ConfidenceVector(np.array([0.2, 0.5, 0.3]))
        np.testing.assert_array_equal(rank(c).ranks, [3, 1, 2])

    def test_ties_take_ascending_index(self):
        c = ConfidenceVector(np.array([0.25, 0.25, 0.5]))
        np.testing.assert_array_equal(rank(c).ranks, [2, 3, 1])

    def test_all_equal(self):
        c = ConfidenceVector(np.full(4, 0.25))
        np.testing.assert_array_equal(rank(c).ranks, [1, 2, 3, 4])

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            k = int(rng.integers(2, 12))
            c = ConfidenceVector(rng.dirichlet(np.ones(k)))
            np.testing.assert_array_equal(rank(c).ranks, _rank_by_double_loop(c.values))

    def test_invariant_under_monotone_rescaling(self):
        """Ranking depends only on order, so any strictly increasing map of
        the entries (renormalized) gives the same ranks."""
        rng = np.random.default_rng(42)
        for _ in range(50):
            c = ConfidenceVector(rng.dirichlet(np.ones(6)))
            squared = c.values**2
            c2 = ConfidenceVector(squared / squared.sum())
            np.testing.assert_array_equal(rank(c).ranks, rank(c2).ranks)


class TestTransformedScores:
    def test_no_order_constraint(self):
        """The container accepts any reals; ordering guarantees live with
        the transforms that produce it."""
        t = TransformedScores(np.array([-5.0, 3.0, 0.0]))
        assert t.k == 3

    def test_rejects_2d(self):
        with pytest.raises(ValueError, match="1-D"):
            TransformedScores(np.ones((2, 2)))

    def test_read_only(self):
        t = TransformedScores(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            t.values[0] = 0.0


class TestTransforms:
    def test_reflection_frozen_example(self):
        """K=2: A = I - ones, so [0.7, 0.3] maps to [-0.3, -0.7]."""
        out = apply_transform(TransformKind.REFLECTION, ConfidenceVector([0.7, 0.3]))
        np.testing.assert_allclose(out.values, [-0.3, -0.7], atol=1e-15)

    def test_identity_is_identity(self):
        c = ConfidenceVector([0.2, 0.8])
        np.testing.assert_array_equal(apply_transform(TransformKind.IDENTITY, c).values, c.values)

    def test_matches_materialized_matrix(self):
        rng = np.random.default_rng(42)
        for k in (2, 5, 17):
            a = transform_matrix(TransformKind.REFLECTION, k)
            for _ in range(20):
                c = ConfidenceVector(rng.dirichlet(np.ones(k)))
                np.testing.assert_allclose(
                    apply_transform(TransformKind.REFLECTION, c).values, a @ c.values, atol=1e-14
                )

    def test_reflection_is_an_involution(self):
        """A is a Householder reflection, so A(Ax) = x."""
        rng = np.random.default_rng(42)
        for k in (2, 10, 64):
            a = transform_matrix(TransformKind.REFLECTION, k)
            x = rng.normal(size=k)
            np.testing.assert_allclose(a @ (a @ x), x, atol=1e-13)

    def test_orthonormality_residual(self):
        for k in (2, 10, 100):
            for kind in TransformKind:
                assert orthonormality_residual(kind, k) <= 1e-12

    def test_order_is_preserved(self):
        """Both maps shift all entries by a common constant (or nothing), so
        the descending ordering of entries never changes."""
        rng = np.random.default_rng(42)
        for _ in range(100):
            k = int(rng.integers(2, 30))
            c = ConfidenceVector(rng.dirichlet(np.ones(k)))
            before = np.argsort(-c.values, kind="stable")
            for kind in TransformKind:
                after = np.argsort(-apply_transform(kind, c).values, kind="stable")
                np.testing.assert_array_equal(before, after)

    def test_distances_and_cosines_preserved(self):
        rng = np.random.default_rng(42)
        for k in (2, 10, 100):
            for _ in range(50):
                x = ConfidenceVector(rng.dirichlet(np.ones(k)))
                y = ConfidenceVector(rng.dirichlet(np.ones(k)))
                ax = apply_transform(TransformKind.REFLECTION, x).values
                ay = apply_transform(TransformKind.REFLECTION, y).values
                d0 = np.linalg.norm(x.values - y.values)
                d1 = np.linalg.norm(ax - ay)
                assert abs(d0 - d1) <= 1e-12
                c0 = np.dot(x.values, y.values) / (np.linalg.norm(x.values) * np.linalg.norm(y.values))
                c1 = np.dot(ax, ay) / (np.linalg.norm(ax) * np.linalg.norm(ay))
                assert abs(c0 - c1) <= 1e-10

    def test_matrix_requires_k_at_least_2(self):
        with pytest.raises(ValueError):
            transform_matrix(TransformKind.REFLECTION, 1)
