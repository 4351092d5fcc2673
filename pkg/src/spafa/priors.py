"""Gibbs-type partition priors with the MRF subgraph modifier.

Implements the weight systems V_n(H) for the Dirichlet process, the
Pitman-Yor process, and the mixture of finite mixtures, the log prior mass
of a partition under the MRF-constrained product form, and the sequential
urn weights consumed by the membership update.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .core import AdjacencyGraph, ChainState, PartitionState, PriorConfig, ValidationError

__all__ = [
    "log_ascending_factorial",
    "LogWeightTable",
    "log_vn",
    "log_psi",
    "log_partition_prior",
    "urn_log_weights",
    "urn_log_weights_from_counts",
]


def log_ascending_factorial(a: float, n: int) -> float:
    """log (a)_n = log a(a+1)...(a+n-1), with (a)_0 = 1.  Requires a > 0."""
    if n == 0:
        return 0.0
    if a <= 0:
        raise ValidationError("ascending factorial base must be positive")
    return float(gammaln(a + n) - gammaln(a))


def _log_vn_dp(beta: float, n: int, H: int) -> float:
    return H * np.log(beta) - log_ascending_factorial(beta, n)


def _log_vn_py(beta: float, delta: float, n: int, H: int) -> float:
    num = 0.0
    for h in range(1, H):
        term = beta + h * delta
        if term <= 0:
            raise ValidationError("beta + h*delta must stay positive")
        num += np.log(term)
    return num - log_ascending_factorial(beta + 1.0, n - 1)


def _log_vn_mfm(config: PriorConfig, n: int, H: int) -> float:
    """log sum_{m >= H} p(m) beta^H prod_{h<H}(m-h) / (mbeta+1)_{n-1}.

    Accumulated in log space; the series is truncated once the geometric
    tail bound falls below truncation_tol times the running sum.
    """
    beta = config.beta
    tol = config.truncation_tol
    log_terms: list[float] = []
    prev = -np.inf
    m = H
    # Poisson-tailed p(m) guarantees eventually decreasing terms; cap the
    # scan generously so a pathological pmf cannot loop forever.
    max_m = max(1000, H + 1000)
    while m <= max_m:
        lp = config.mfm_log_pmf(m)
        if lp > -np.inf:
            lt = (lp + H * np.log(beta)
                  - log_ascending_factorial(m * beta + 1.0, n - 1))
            for h in range(1, H):
                lt += np.log(m - h)
            log_terms.append(lt)
            if log_terms and prev > -np.inf and lt < prev:
                ratio = np.exp(lt - prev)
                if ratio < 1.0:
                    current = _logsumexp(log_terms)
                    log_tail_bound = lt + np.log(ratio) - np.log1p(-ratio)
                    if log_tail_bound < current + np.log(tol):
                        return current
            prev = lt
        m += 1
    if not log_terms:
        raise ValidationError("MFM component pmf assigns no mass to m >= H")
    return _logsumexp(log_terms)


def _logsumexp(log_terms: list[float]) -> float:
    arr = np.asarray(log_terms)
    mx = arr.max()
    if not np.isfinite(mx):
        return -np.inf
    return float(mx + np.log(np.exp(arr - mx).sum()))


def log_vn(config: PriorConfig, n: int, H: int) -> float:
    """log V_n(H) for the configured family; requires 1 <= H <= n."""
    if not 1 <= H <= n:
        raise ValidationError(f"need 1 <= H <= n, got H={H}, n={n}")
    if config.family == "DP":
        return _log_vn_dp(config.beta, n, H)
    if config.family == "PY":
        return _log_vn_py(config.beta, config.delta, n, H)
    return _log_vn_mfm(config, n, H)


class LogWeightTable:
    """Memoized log V_n(H); the sampler queries the same (n, H+-1) every sweep."""

    def __init__(self, config: PriorConfig):
        self.config = config
        self._cache: dict[tuple[int, int], float] = {}

    def __call__(self, n: int, H: int) -> float:
        key = (n, H)
        if key not in self._cache:
            self._cache[key] = log_vn(self.config, n, H)
        return self._cache[key]


def log_psi(subgraph_edges: int, n_h: int, g_h: float, d: float) -> float:
    """log of the subgraph modifier: n_h * g_h + d * |within-cluster edges|."""
    if subgraph_edges < 0 or n_h < 0:
        raise ValidationError("counts must be nonnegative")
    return n_h * g_h + d * subgraph_edges


def log_partition_prior(partition: PartitionState, graph: AdjacencyGraph,
                        config: PriorConfig,
                        table: LogWeightTable | None = None) -> float:
    """Unnormalized log mass of a partition under the MRF-constrained prior.

    log V_n(H) + sum_h [ log psi(G_h) + log (1 - delta)_{n_h - 1} ].
    """
    if partition.n != graph.n:
        raise ValidationError("partition and graph sizes differ")
    if table is None:
        table = LogWeightTable(config)
    n, H = partition.n, partition.H
    total = table(n, H)
    edge_counts = graph.within_cluster_edges(partition.z, H)
    for h in range(H):
        n_h = int(partition.counts[h])
        total += log_psi(int(edge_counts[h]), n_h, config.mrf_g, config.mrf_d)
        total += log_ascending_factorial(1.0 - config.delta, n_h - 1)
    return float(total)


def urn_log_weights_from_counts(counts: np.ndarray,
                                same_neighbor_counts: np.ndarray,
                                n_total: int, config: PriorConfig,
                                table: LogWeightTable) -> np.ndarray:
    """Prior-only log urn weights over H existing clusters plus a new one.

    counts are the cluster sizes with the spot being (re)assigned held out;
    same_neighbor_counts[h] is the number of its graph neighbors currently
    in cluster h.  Entry h: log(n_h - delta) + d * neighbors_h + g_h.
    Entry H+1: log V_n(H+1) - log V_n(H), evaluated at n = n_total.
    """
    counts = np.asarray(counts, dtype=np.float64)
    H = len(counts)
    w = np.empty(H + 1)
    sizes = counts - config.delta
    if np.any(sizes <= 0):
        raise ValidationError("n_h - delta must be positive for every cluster")
    w[:H] = (np.log(sizes) + config.mrf_d * np.asarray(same_neighbor_counts)
             + config.mrf_g)
    w[H] = table(n_total, H + 1) - table(n_total, H)
    return w


def urn_log_weights(i: int, state: ChainState, graph: AdjacencyGraph,
                    config: PriorConfig,
                    table: LogWeightTable | None = None) -> np.ndarray:
    """Urn weights for spot i given the rest of the current partition.

    The spot's own membership is held out; clusters emptied by the removal
    are dropped (the caller is responsible for compacting state if it keeps
    the draw).  These weights are prior-only; the sampler adds likelihoods.
    """
    if table is None:
        table = LogWeightTable(config)
    part = state.partition
    counts = part.counts.astype(np.int64).copy()
    counts[part.z[i]] -= 1
    keep = counts > 0
    kept_labels = np.flatnonzero(keep)
    nbr = graph.neighbors[i]
    nbr_z = part.z[nbr]
    same = np.array([(nbr_z == h).sum() for h in kept_labels], dtype=np.int64)
    return urn_log_weights_from_counts(counts[keep], same, part.n, config,
                                       table)
