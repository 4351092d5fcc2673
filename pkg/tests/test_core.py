"""Domain-type invariants and serialization round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spafa.core import (AdjacencyGraph, ChainState, ChainTrace,
                        ExpressionMatrix, HyperParams, PartitionState,
                        PriorConfig, SpatialCoords, TraceRecord,
                        ValidationError, canonicalize_labels,
                        shifted_poisson_log_pmf)

from conftest import make_state


class TestExpressionMatrix:
    def test_valid(self):
        m = ExpressionMatrix(np.ones((2, 3)), ["g1", "g2"], ["a", "b", "c"])
        assert m.p == 2 and m.n == 3

    def test_duplicate_spot_id(self):
        with pytest.raises(ValidationError, match="s1"):
            ExpressionMatrix(np.ones((1, 2)), ["g"], ["s1", "s1"])

    def test_duplicate_gene_id(self):
        with pytest.raises(ValidationError, match="g1"):
            ExpressionMatrix(np.ones((2, 2)), ["g1", "g1"], ["a", "b"])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            ExpressionMatrix(np.array([[1.0, np.nan]]), ["g"], ["a", "b"])

    def test_single_spot_rejected(self):
        with pytest.raises(ValidationError):
            ExpressionMatrix(np.ones((2, 1)), ["g1", "g2"], ["a"])


class TestSpatialCoords:
    def test_shape_enforced(self):
        with pytest.raises(ValidationError):
            SpatialCoords(np.ones((3, 3)))

    def test_finite_enforced(self):
        with pytest.raises(ValidationError):
            SpatialCoords(np.array([[0.0, np.inf]]))

    def test_n(self):
        assert SpatialCoords(np.zeros((5, 2))).n == 5


class TestAdjacencyGraph:
    def test_self_loop_rejected(self):
        with pytest.raises(ValidationError):
            AdjacencyGraph(3, [(1, 1)])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            AdjacencyGraph(3, [(0, 5)])

    def test_symmetric_dedup(self):
        g = AdjacencyGraph(3, [(0, 1), (1, 0), (1, 2)])
        assert g.n_edges == 2
        assert list(g.neighbors[1]) == [0, 2]

    def test_within_cluster_edges(self):
        g = AdjacencyGraph(4, [(0, 1), (1, 2), (2, 3)])
        z = np.array([0, 0, 1, 1])
        assert g.within_cluster_edges(z, 2).tolist() == [1, 1]


class TestCanonicalize:
    def test_first_appearance_order(self):
        z = np.array([2, 2, 0, 1, 0])
        assert canonicalize_labels(z).tolist() == [0, 0, 1, 2, 1]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=30))
    def test_idempotent_and_partition_preserving(self, labels):
        z = np.asarray(labels)
        c = canonicalize_labels(z)
        assert np.array_equal(canonicalize_labels(c), c)
        # same induced set partition
        n = len(z)
        for i in range(n):
            for j in range(n):
                assert (z[i] == z[j]) == (c[i] == c[j])
        # labels are 0..H-1 with no gaps
        assert sorted(set(c.tolist())) == list(range(c.max() + 1))


class TestPartitionState:
    def test_counts(self):
        p = PartitionState(np.array([0, 1, 0, 2]))
        assert p.H == 3
        assert p.counts.tolist() == [2, 1, 1]
        assert p.n == 4

    def test_auto_canonicalized(self):
        p = PartitionState(np.array([5, 5, 9]))
        assert p.z.tolist() == [0, 0, 1]


class TestPriorConfig:
    def test_dp_requires_zero_delta(self):
        with pytest.raises(ValidationError):
            PriorConfig(family="DP", beta=1.0, delta=0.5)

    def test_py_range(self):
        PriorConfig(family="PY", beta=1.0, delta=0.25)
        with pytest.raises(ValidationError):
            PriorConfig(family="PY", beta=1.0, delta=1.0)

    def test_py_negative_delta_needs_flag(self):
        with pytest.raises(ValidationError):
            PriorConfig(family="PY", beta=1.0, delta=-0.1)
        cfg = PriorConfig(family="PY", beta=1.0, delta=-0.1,
                          allow_nonstandard_py=True)
        assert cfg.delta == -0.1

    def test_py_beta_bound(self):
        with pytest.raises(ValidationError):
            PriorConfig(family="PY", beta=-0.5, delta=0.25)

    def test_mfm_delta_tied_to_beta(self):
        PriorConfig(family="MFM", beta=2.0, delta=-2.0)
        with pytest.raises(ValidationError):
            PriorConfig(family="MFM", beta=1.0, delta=-0.5)

    def test_negative_d_rejected(self):
        with pytest.raises(ValidationError):
            PriorConfig(family="DP", beta=1.0, delta=0.0, mrf_d=-0.1)

    def test_unknown_family(self):
        with pytest.raises(ValidationError):
            PriorConfig(family="XX", beta=1.0, delta=0.0)


class TestHyperParams:
    def test_positivity(self):
        for bad in [dict(tau_w=0.0), dict(tau_mu=-1.0), dict(a=0.0),
                    dict(b=-2.0), dict(q=0)]:
            kw = dict(q=2, tau_w=1.0, tau_mu=1.0, a=1.0, b=1.0)
            kw.update(bad)
            with pytest.raises(ValidationError):
                HyperParams(**kw)


class TestChainState:
    def test_roundtrip_bit_identical(self, rng):
        state = make_state(rng)
        blob = state.to_bytes()
        back = ChainState.from_bytes(blob)
        assert np.array_equal(back.partition.z, state.partition.z)
        assert np.array_equal(back.factors.Y, state.factors.Y)
        assert np.array_equal(back.params.W, state.params.W)
        assert np.array_equal(back.params.Lambda, state.params.Lambda)
        assert np.array_equal(back.params.mu, state.params.mu)
        assert np.array_equal(back.params.Sigma, state.params.Sigma)
        assert back.to_bytes() == blob

    def test_mu_row_mismatch(self, rng):
        state = make_state(rng)
        state.params.mu = state.params.mu[:1]
        with pytest.raises(ValidationError):
            state.validate()


class TestChainTrace:
    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            ChainTrace([], burn_in=0, thin=1, seed=0)

    def test_inconsistent_lengths_rejected(self):
        recs = [TraceRecord(1, np.zeros(3, dtype=np.int64), 1, -1.0),
                TraceRecord(2, np.zeros(4, dtype=np.int64), 1, -1.0)]
        with pytest.raises(ValidationError):
            ChainTrace(recs, burn_in=0, thin=1, seed=0)


class TestShiftedPoisson:
    def test_normalizes(self):
        log_pmf = shifted_poisson_log_pmf(1.0)
        total = sum(np.exp(log_pmf(m)) for m in range(1, 60))
        assert abs(total - 1.0) < 1e-12

    def test_mode_at_one_and_two(self):
        # H-1 ~ Poisson(1): P(m=1) = P(m=2) = e^-1
        log_pmf = shifted_poisson_log_pmf(1.0)
        assert abs(log_pmf(1) - (-1.0)) < 1e-12
        assert abs(log_pmf(2) - (-1.0)) < 1e-12
