"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from spafa.core import (ChainState, ExpressionMatrix, FactorModelParams,
                        HyperParams, LatentFactors, PartitionState,
                        PriorConfig, SpatialCoords)
from spafa.ingest import NeighborRule, build_graph
from spafa.simulate import lattice_coords


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_graph():
    """4x4 square lattice with rook adjacency (24 edges)."""
    coords = lattice_coords("square", 4)
    return build_graph(coords, NeighborRule("square4"))


@pytest.fixture
def tiny_expression(rng):
    X = rng.standard_normal((6, 10))
    return ExpressionMatrix(X, [f"g{j}" for j in range(6)],
                            [f"s{i}" for i in range(10)])


def make_state(rng, n=10, p=6, q=2, H=2):
    """A dimensionally consistent random chain state."""
    z = np.asarray([h % H for h in range(n)])
    part = PartitionState(z)
    Y = rng.standard_normal((q, n))
    W = rng.standard_normal((p, q))
    Lam = rng.uniform(0.5, 2.0, size=p)
    mu = rng.standard_normal((part.H, q))
    A = rng.standard_normal((q, q))
    Sigma = A @ A.T + np.eye(q)
    return ChainState(part, LatentFactors(Y), FactorModelParams(W, Lam, mu, Sigma))


@pytest.fixture
def default_hyper():
    return HyperParams(q=2, tau_w=1.0, tau_mu=1.0, a=1.0, b=1.0)


def mfm_config(d=0.0, g=1.0, beta=1.0):
    return PriorConfig(family="MFM", beta=beta, delta=-beta, mrf_d=d, mrf_g=g)


def dp_config(d=0.0, g=1.0, beta=1.0):
    return PriorConfig(family="DP", beta=beta, delta=0.0, mrf_d=d, mrf_g=g)


def py_config(d=0.0, g=1.0, beta=1.0, delta=0.25):
    return PriorConfig(family="PY", beta=beta, delta=delta, mrf_d=d, mrf_g=g)
