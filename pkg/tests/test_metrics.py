"""Adjusted Rand index and cluster counting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spafa.core import ValidationError
from spafa.metrics import ari, cluster_count, pair_counts


def pair_loop_ari(truth, est):
    """O(n^2) reference implementation straight from the pair definition."""
    truth = list(truth)
    est = list(est)
    n = len(truth)
    A = B = C = D = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_t = truth[i] == truth[j]
            same_e = est[i] == est[j]
            if same_t and same_e:
                A += 1
            elif same_t:
                B += 1
            elif same_e:
                C += 1
            else:
                D += 1
    total = n * (n - 1) // 2
    expected = (A + B) * (A + C) + (C + D) * (B + D)
    num = total * (A + D) - expected
    den = total * total - expected
    if den == 0:
        same = all((truth[i] == truth[j]) == (est[i] == est[j])
                   for i in range(n) for j in range(i + 1, n))
        return 1.0 if same else 0.0
    return num / den


class TestAri:
    def test_identical(self):
        assert ari([1, 1, 2, 2], [1, 1, 2, 2]) == 1.0

    def test_hand_case(self):
        assert ari([1, 1, 2, 2], [1, 2, 1, 2]) == -0.5

    def test_hand_case_pair_counts(self):
        A, B, C, D = pair_counts([1, 1, 2, 2], [1, 2, 1, 2])
        assert (A, B, C, D) == (0, 2, 2, 2)

    def test_permutation_invariance(self, rng):
        truth = rng.integers(0, 4, size=50)
        est = rng.integers(0, 4, size=50)
        base = ari(truth, est)
        perm = np.array([3, 0, 1, 2])
        assert ari(truth, perm[est]) == base

    def test_symmetric(self, rng):
        for _ in range(20):
            a = rng.integers(0, 5, size=30)
            b = rng.integers(0, 5, size=30)
            assert ari(a, b) == ari(b, a)

    def test_fast_path_equals_pair_loop(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 120))
            a = rng.integers(0, int(rng.integers(1, 8)), size=n)
            b = rng.integers(0, int(rng.integers(1, 8)), size=n)
            assert ari(a, b) == pytest.approx(pair_loop_ari(a, b), abs=1e-13)

    def test_degenerate_both_single(self):
        assert ari([1, 1, 1], [7, 7, 7]) == 1.0

    def test_degenerate_mismatch(self):
        # both partitions trivial in the formula's denominator sense but not
        # equal as set partitions
        assert ari([1, 2], [1, 1]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            ari([1, 2], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(ValidationError):
            ari([1], [1])

    def test_upper_bound(self, rng):
        for _ in range(30):
            a = rng.integers(0, 4, size=25)
            b = rng.integers(0, 4, size=25)
            v = ari(a, b)
            assert v <= 1.0
            if v == 1.0:
                # equality iff identical set partitions
                for i in range(25):
                    for j in range(25):
                        assert (a[i] == a[j]) == (b[i] == b[j])

    def test_string_labels(self):
        assert ari(["x", "x", "y"], [0, 0, 1]) == 1.0


class TestClusterCount:
    def test_basic(self):
        assert cluster_count([1, 1, 1]) == 1
        assert cluster_count(["a", "b", "a", "c"]) == 3

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=40))
    def test_matches_set_cardinality(self, labels):
        assert cluster_count(labels) == len(set(labels))
