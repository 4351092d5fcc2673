"""Collapsed Gibbs sampler for the spatial factor-mixture model.

One sweep updates, in order: latent factors, loadings, residual variances,
component means, the shared latent covariance, and finally the cluster
memberships (sequentially, with the MRF-weighted urn).  Labels are
compacted to first-appearance order after every sweep so the number of
clusters always equals the number of non-empty clusters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .core import (AdjacencyGraph, ChainState, ChainTrace, ExpressionMatrix,
                   FactorModelParams, HyperParams, LatentFactors,
                   NumericalError, PartitionState, PriorConfig, TraceRecord,
                   ValidationError, canonicalize_labels)
from .priors import LogWeightTable, log_partition_prior, urn_log_weights_from_counts

__all__ = [
    "SamplerConfig",
    "sample_y",
    "sample_y_all",
    "sample_w_row",
    "sample_w_all",
    "sample_sigma2",
    "sample_sigma2_all",
    "sample_mu",
    "sample_mu_all",
    "sample_sigma",
    "sample_z",
    "z_sweep",
    "sweep",
    "complete_log_score",
    "initialize_state",
    "run_chain",
]

_LOG2PI = np.log(2.0 * np.pi)


@dataclass
class SamplerConfig:
    iterations: int
    burn_in: int
    thin: int = 1
    seed: int = 0
    init: str = "kmeans(5)"
    parallel_width: int = 1     # hint only; updates are vectorized
    randomize_order: bool = False

    def __post_init__(self):
        if not self.burn_in < self.iterations:
            raise ValidationError("burn_in must be < iterations")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")


def _parse_init(spec: str) -> tuple[str, int]:
    m = re.fullmatch(r"(kmeans|random)\((\d+)\)|single", spec.strip())
    if not m:
        raise ValidationError(
            f"init must be kmeans(H0), random(H0) or single; got {spec!r}")
    if m.group(1) is None:
        return "single", 1
    return m.group(1), int(m.group(2))


def _chol(mat: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"{what} is not positive definite") from e


def _spd_inverse(mat: np.ndarray, what: str) -> np.ndarray:
    L = _chol(mat, what)
    return cho_solve((L, True), np.eye(mat.shape[0]))


# ---------------------------------------------------------------------------
# conditional updates
# ---------------------------------------------------------------------------

def _y_posterior(params: FactorModelParams):
    """Shared posterior pieces of the latent-factor update.

    Returns (Sigma*, chol(Sigma*), W^T Lambda^-1, Sigma^-1).
    """
    W, Lam = params.W, params.Lambda
    Sig_inv = _spd_inverse(params.Sigma, "Sigma")
    WtLi = W.T / Lam[None, :]
    prec = WtLi @ W + Sig_inv
    cov = _spd_inverse(prec, "latent-factor posterior precision")
    return cov, _chol(cov, "latent-factor posterior covariance"), WtLi, Sig_inv


def sample_y(i: int, state: ChainState, X: ExpressionMatrix,
             rng: np.random.Generator) -> np.ndarray:
    """Draw the latent factor of spot i from its full conditional."""
    cov, L, WtLi, Sig_inv = _y_posterior(state.params)
    h = state.partition.z[i]
    mean = cov @ (WtLi @ X.values[:, i] + Sig_inv @ state.params.mu[h])
    return mean + L @ rng.standard_normal(len(mean))


def sample_y_all(state: ChainState, X: ExpressionMatrix,
                 rng: np.random.Generator) -> np.ndarray:
    """Vectorized latent-factor update for all spots; returns new q x n Y."""
    cov, L, WtLi, Sig_inv = _y_posterior(state.params)
    means = cov @ (WtLi @ X.values + Sig_inv @ state.params.mu[state.partition.z].T)
    q, n = means.shape
    return means + L @ rng.standard_normal((q, n))


def _w_posterior(Y: np.ndarray, tau_w: float):
    q = Y.shape[0]
    A = _spd_inverse(Y @ Y.T + tau_w * np.eye(q), "loadings posterior precision")
    return A, _chol(A, "loadings posterior covariance")


def sample_w_row(j: int, state: ChainState, X: ExpressionMatrix,
                 hyper: HyperParams, rng: np.random.Generator) -> np.ndarray:
    """Draw loading row j: N(A Y x_j, sigma_j^2 A), A = (YY^T + tau_w I)^-1."""
    Y = state.factors.Y
    A, L = _w_posterior(Y, hyper.tau_w)
    mean = A @ (Y @ X.values[j])
    return mean + np.sqrt(state.params.Lambda[j]) * (L @ rng.standard_normal(len(mean)))


def sample_w_all(state: ChainState, X: ExpressionMatrix, hyper: HyperParams,
                 rng: np.random.Generator) -> np.ndarray:
    """Vectorized loadings update; returns new p x q W."""
    Y = state.factors.Y
    A, L = _w_posterior(Y, hyper.tau_w)
    means = (A @ (Y @ X.values.T)).T
    p, q = means.shape
    noise = rng.standard_normal((p, q)) @ L.T
    return means + np.sqrt(state.params.Lambda)[:, None] * noise


def sample_sigma2(j: int, state: ChainState, X: ExpressionMatrix,
                  hyper: HyperParams, rng: np.random.Generator) -> float:
    """Draw residual variance j from IG(a*, b*)."""
    Y = state.factors.Y
    q, n = Y.shape
    resid = X.values[j] - state.params.W[j] @ Y
    a_star = 0.5 * (q + n) + hyper.a
    b_star = 0.5 * (resid @ resid
                    + hyper.tau_w * (state.params.W[j] @ state.params.W[j])) + hyper.b
    return float(b_star / rng.gamma(a_star))


def sample_sigma2_all(state: ChainState, X: ExpressionMatrix,
                      hyper: HyperParams, rng: np.random.Generator) -> np.ndarray:
    """Vectorized residual-variance update; returns new length-p Lambda."""
    Y = state.factors.Y
    W = state.params.W
    q, n = Y.shape
    resid = X.values - W @ Y
    a_star = 0.5 * (q + n) + hyper.a
    b_star = 0.5 * ((resid ** 2).sum(axis=1)
                    + hyper.tau_w * (W ** 2).sum(axis=1)) + hyper.b
    return b_star / rng.gamma(a_star, 1.0, size=len(b_star))


def sample_mu(h: int, state: ChainState, hyper: HyperParams,
              rng: np.random.Generator) -> np.ndarray:
    """Draw component mean h: N(sum y_i / (n_h + tau_mu), Sigma/(n_h + tau_mu))."""
    part = state.partition
    n_h = int(part.counts[h])
    if n_h == 0:
        raise ValidationError("empty cluster must have been compacted away")
    ysum = state.factors.Y[:, part.z == h].sum(axis=1)
    denom = n_h + hyper.tau_mu
    L = state.params.sigma_chol()
    return ysum / denom + (L @ rng.standard_normal(len(ysum))) / np.sqrt(denom)


def sample_mu_all(state: ChainState, hyper: HyperParams,
                  rng: np.random.Generator) -> np.ndarray:
    """Update every component mean; returns new H x q mu."""
    part = state.partition
    q = state.factors.q
    L = state.params.sigma_chol()
    mu = np.empty((part.H, q))
    for h in range(part.H):
        n_h = int(part.counts[h])
        denom = n_h + hyper.tau_mu
        ysum = state.factors.Y[:, part.z == h].sum(axis=1)
        mu[h] = ysum / denom + (L @ rng.standard_normal(q)) / np.sqrt(denom)
    return mu


def sample_sigma(state: ChainState, hyper: HyperParams,
                 rng: np.random.Generator) -> np.ndarray:
    """Draw the shared latent covariance from IW(Phi, n + H).

    Uses a Bartlett decomposition of the Wishart(nu, Phi^-1) precision and
    inverts it.  Raises NumericalError when Phi is not positive definite.
    """
    part = state.partition
    Y = state.factors.Y
    mu = state.params.mu
    q = Y.shape[0]
    Phi = np.zeros((q, q))
    for h in range(part.H):
        R = Y[:, part.z == h] - mu[h][:, None]
        Phi += R @ R.T + hyper.tau_mu * np.outer(mu[h], mu[h])
    nu = part.n + part.H
    if nu <= q - 1:
        raise NumericalError("inverse-Wishart degrees of freedom too small")
    L_S = _chol(_spd_inverse(Phi, "inverse-Wishart scale"), "Phi inverse")
    A = np.zeros((q, q))
    for i in range(q):
        A[i, i] = np.sqrt(rng.chisquare(nu - i))
    tril = np.tril_indices(q, -1)
    A[tril] = rng.standard_normal(len(tril[0]))
    T = L_S @ A                     # lower triangular
    T_inv = solve_triangular(T, np.eye(q), lower=True)
    Sigma = T_inv.T @ T_inv
    return 0.5 * (Sigma + Sigma.T)


def _mvn_logpdf_at(diffs: np.ndarray, L: np.ndarray) -> np.ndarray:
    """log N(diff; 0, LL^T) for each column of diffs (q x m)."""
    q = diffs.shape[0]
    sol = solve_triangular(L, diffs, lower=True)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return -0.5 * (q * _LOG2PI + logdet + (sol ** 2).sum(axis=0))


def _sigma_cache(L: np.ndarray) -> tuple[np.ndarray, float]:
    """(L^-1, log det Sigma) reused across a whole membership sweep."""
    L_inv = solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return L_inv, 2.0 * float(np.log(np.diag(L)).sum())


def _categorical_from_log(weights: np.ndarray, rng: np.random.Generator) -> int:
    w = weights - weights.max()
    probs = np.exp(w)
    cdf = np.cumsum(probs)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


def sample_z(i: int, state: ChainState, X: ExpressionMatrix,
             graph: AdjacencyGraph, config: PriorConfig, hyper: HyperParams,
             rng: np.random.Generator,
             table: LogWeightTable | None = None,
             sigma_cache: tuple[np.ndarray, float] | None = None) -> int:
    """Reassign spot i and update the state in place; returns the new label.

    Existing clusters weight prior urn terms times N(y_i | mu_h, Sigma);
    a new cluster weights V_n(H+1)/V_n(H) times the collapsed marginal
    N(y_i | 0, (1 + 1/tau_mu) Sigma), and on acceptance its mean is drawn
    from the conditional before the next spot is visited.  Emptied clusters
    are dropped immediately.  sigma_cache carries (chol(Sigma)^-1,
    log det Sigma) so a full sweep factors Sigma only once.
    """
    if table is None:
        table = LogWeightTable(config)
    part = state.partition
    y_i = state.factors.Y[:, i]
    q = len(y_i)

    h_old = int(part.z[i])
    part.counts[h_old] -= 1
    if part.counts[h_old] == 0:
        part.counts = np.delete(part.counts, h_old)
        state.params.mu = np.delete(state.params.mu, h_old, axis=0)
        part.z[part.z > h_old] -= 1
        part.H -= 1
    H = part.H

    # spot i is never its own neighbor, so its stale label is never read
    same = np.zeros(H, dtype=np.int64)
    for j in graph.neighbors[i]:
        same[part.z[j]] += 1

    prior = urn_log_weights_from_counts(part.counts, same, part.n, config,
                                        table)
    L = state.params.sigma_chol()
    if sigma_cache is None:
        sigma_cache = _sigma_cache(L)
    L_inv, logdet = sigma_cache
    scale = np.sqrt(1.0 + 1.0 / hyper.tau_mu)
    # all H existing components plus the collapsed new-cluster marginal in
    # one triangular-multiply
    diffs = np.empty((q, H + 1))
    diffs[:, :H] = y_i[:, None] - state.params.mu.T
    diffs[:, H] = y_i / scale
    sol = L_inv @ diffs
    lik = -0.5 * (q * _LOG2PI + logdet + (sol ** 2).sum(axis=0))
    lik[H] -= q * np.log(scale)

    choice = _categorical_from_log(prior + lik, rng)
    if choice == H:
        denom = 1.0 + hyper.tau_mu
        mu_new = y_i / denom + (L @ rng.standard_normal(q)) / np.sqrt(denom)
        state.params.mu = np.vstack([state.params.mu, mu_new])
        part.counts = np.append(part.counts, 1)
        part.H += 1
    else:
        part.counts[choice] += 1
    part.z[i] = choice
    return choice


def z_sweep(state: ChainState, X: ExpressionMatrix, graph: AdjacencyGraph,
            config: PriorConfig, hyper: HyperParams,
            rng: np.random.Generator, table: LogWeightTable,
            order: np.ndarray | None = None):
    """Sequential membership update over all spots, then label compaction."""
    if order is None:
        order = np.arange(state.partition.n)
    cache = _sigma_cache(state.params.sigma_chol())
    for i in order:
        sample_z(int(i), state, X, graph, config, hyper, rng, table, cache)
    _compact(state)


def _compact(state: ChainState):
    """Relabel to first-appearance order, permuting mu rows to match."""
    part = state.partition
    new_z = canonicalize_labels(part.z)
    perm = np.empty(part.H, dtype=np.int64)
    seen = np.zeros(part.H, dtype=bool)
    for old, new in zip(part.z, new_z):
        if not seen[old]:
            perm[new] = old
            seen[old] = True
    part.z = new_z
    part.counts = part.counts[perm]
    state.params.mu = state.params.mu[perm]


def sweep(state: ChainState, X: ExpressionMatrix, graph: AdjacencyGraph,
          config: PriorConfig, hyper: HyperParams, rng: np.random.Generator,
          table: LogWeightTable, randomize_order: bool = False):
    """One full Gibbs sweep in the canonical update order."""
    state.factors.Y = sample_y_all(state, X, rng)
    state.params.W = sample_w_all(state, X, hyper, rng)
    state.params.Lambda = sample_sigma2_all(state, X, hyper, rng)
    state.params.mu = sample_mu_all(state, hyper, rng)
    state.params.set_sigma(sample_sigma(state, hyper, rng))
    order = (rng.permutation(state.partition.n) if randomize_order else None)
    z_sweep(state, X, graph, config, hyper, rng, table, order)


def complete_log_score(state: ChainState, X: ExpressionMatrix,
                       graph: AdjacencyGraph, config: PriorConfig,
                       hyper: HyperParams,
                       table: LogWeightTable | None = None) -> float:
    """Complete-data log score: data + latent Gaussian terms + partition prior.

    Unnormalized in the MRF constant but consistent across iterations, so
    the argmax over a chain is well-defined.
    """
    Y = state.factors.Y
    W, Lam = state.params.W, state.params.Lambda
    q, n = Y.shape
    p = W.shape[0]
    resid = X.values - W @ Y
    term_x = -0.5 * (n * p * _LOG2PI + n * np.log(Lam).sum()
                     + ((resid ** 2) / Lam[:, None]).sum())
    L = state.params.sigma_chol()
    diffs = Y - state.params.mu[state.partition.z].T
    term_y = _mvn_logpdf_at(diffs, L).sum()
    return float(term_x + term_y
                 + log_partition_prior(state.partition, graph, config, table))


# ---------------------------------------------------------------------------
# initialization and chain driver
# ---------------------------------------------------------------------------

def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            iters: int = 50) -> np.ndarray:
    """Plain Lloyd's algorithm on rows of points; seeded, deterministic."""
    n = points.shape[0]
    k = min(k, n)
    centers = points[rng.choice(n, size=k, replace=False)]
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            mask = labels == c
            if mask.any():
                centers[c] = points[mask].mean(axis=0)
    return labels


def _smooth_labels(z: np.ndarray, graph: AdjacencyGraph,
                   passes: int = 10) -> np.ndarray:
    """Majority-vote label smoothing over the spatial graph.

    Each pass reassigns every spot to its most common neighbor label when
    that label is strictly more frequent than the spot's own.  This makes
    the initial partition spatially coherent, which keeps the early sweeps
    of a smoothness-constrained chain from cascading into a single cluster
    before the component means have adapted.
    """
    z = z.copy()
    for _ in range(passes):
        changed = False
        for i in range(len(z)):
            nb = z[graph.neighbors[i]]
            if len(nb) == 0:
                continue
            counts = np.bincount(nb, minlength=z[i] + 1)
            best = int(counts.argmax())
            if counts[best] > counts[z[i]]:
                z[i] = best
                changed = True
        if not changed:
            break
    return z


def initialize_state(X: ExpressionMatrix, hyper: HyperParams,
                     sampler_cfg: SamplerConfig,
                     rng: np.random.Generator,
                     graph: Optional[AdjacencyGraph] = None) -> ChainState:
    """Seed the chain from the top-q principal directions of X.

    W starts at the scaled top-q left singular vectors, Y at the ridge
    projection of X onto them, and z at a k-means partition of the
    projected columns (or random/single per the init spec).  When a graph
    is supplied the k-means labels are spatially smoothed by majority vote.
    """
    q = hyper.q
    p, n = X.values.shape
    if not (q < p and q < n):
        raise ValidationError("latent dimension must satisfy q < p and q < n")
    U, S, _ = np.linalg.svd(X.values, full_matrices=False)
    W0 = U[:, :q] * (S[:q] / np.sqrt(n))[None, :]
    Y0 = np.linalg.solve(W0.T @ W0 + np.eye(q), W0.T @ X.values)

    mode, H0 = _parse_init(sampler_cfg.init)
    if mode == "kmeans":
        z0 = _kmeans(Y0.T, H0, rng)
        if graph is not None:
            z0 = _smooth_labels(z0, graph)
    elif mode == "random":
        z0 = rng.integers(0, H0, size=n)
    else:
        z0 = np.zeros(n, dtype=np.int64)
    part = PartitionState(canonicalize_labels(z0))

    Sigma0 = np.cov(Y0) if q > 1 else np.atleast_2d(np.var(Y0))
    Sigma0 = np.atleast_2d(Sigma0) + 1e-6 * np.eye(q)
    mu0 = np.vstack([Y0[:, part.z == h].mean(axis=1) for h in range(part.H)])
    params = FactorModelParams(W0, np.ones(p), mu0, Sigma0)
    return ChainState(part, LatentFactors(Y0), params)


def run_chain(X: ExpressionMatrix, graph: AdjacencyGraph, config: PriorConfig,
              hyper: HyperParams, sampler_cfg: SamplerConfig) -> ChainTrace:
    """Run U sweeps, recording kept iterations after burn-in.

    Fully deterministic for a fixed seed.  Numerical failures abort with
    the iteration number attached.
    """
    if X.n != graph.n:
        raise ValidationError("expression and graph disagree on spot count")
    rng = np.random.default_rng(sampler_cfg.seed)
    table = LogWeightTable(config)
    state = initialize_state(X, hyper, sampler_cfg, rng, graph)
    records: list[TraceRecord] = []
    for it in range(1, sampler_cfg.iterations + 1):
        try:
            sweep(state, X, graph, config, hyper, rng, table,
                  sampler_cfg.randomize_order)
        except NumericalError as e:
            raise NumericalError(f"iteration {it}: {e}") from e
        if it > sampler_cfg.burn_in and \
                (it - sampler_cfg.burn_in - 1) % sampler_cfg.thin == 0:
            score = complete_log_score(state, X, graph, config, hyper, table)
            records.append(TraceRecord(it, state.partition.z.copy(),
                                       state.partition.H, score))
    state.validate()
    return ChainTrace(records, sampler_cfg.burn_in, sampler_cfg.thin,
                      sampler_cfg.seed, final_state=state.copy())
