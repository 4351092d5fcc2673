"""Shared domain types for the spatial factor-mixture clustering model.

Conventions used throughout the package:

* Expression matrices are stored genes-by-spots (p x n).
* Cluster labels are 0-based integers internally; the file formats written
  by the CLI use 1-based labels.
* All matrices are float64; log-space accumulation is used everywhere a
  product of many densities appears.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ExpressionMatrix",
    "SpatialCoords",
    "AdjacencyGraph",
    "PartitionState",
    "FactorModelParams",
    "LatentFactors",
    "PriorConfig",
    "HyperParams",
    "ChainState",
    "ChainTrace",
    "TraceRecord",
    "canonicalize_labels",
    "shifted_poisson_log_pmf",
]


class SpafaError(Exception):
    """Base class for package errors."""


class ValidationError(SpafaError):
    """An input violated a structural invariant."""


class NumericalError(SpafaError):
    """A numerical operation failed (non-PD matrix, degenerate state)."""


def canonicalize_labels(z: np.ndarray) -> np.ndarray:
    """Relabel cluster assignments to order of first appearance (0-based).

    Idempotent and preserves the induced set partition.
    """
    z = np.asarray(z)
    out = np.empty(len(z), dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(z):
        lab = int(lab)
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


@dataclass(frozen=True)
class ExpressionMatrix:
    """p x n expression profile with gene (row) and spot (column) identifiers."""

    values: np.ndarray
    gene_ids: list[str]
    spot_ids: list[str]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ValidationError("expression values must be a 2-d matrix")
        p, n = v.shape
        if p < 1 or n < 2:
            raise ValidationError(f"need p >= 1 and n >= 2, got p={p}, n={n}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("expression values must be finite")
        if len(self.gene_ids) != p:
            raise ValidationError("gene_ids length does not match row count")
        if len(self.spot_ids) != n:
            raise ValidationError("spot_ids length does not match column count")
        for name, ids in (("gene", self.gene_ids), ("spot", self.spot_ids)):
            seen: set[str] = set()
            for x in ids:
                if x in seen:
                    raise ValidationError(f"duplicate {name} ID {x!r}")
                seen.add(x)

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SpatialCoords:
    """n x 2 spot coordinates in platform units."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", c)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValidationError("coords must be an n x 2 matrix")
        if not np.all(np.isfinite(c)):
            raise ValidationError("coordinates must be finite")

    @property
    def n(self) -> int:
        return self.coords.shape[0]


class AdjacencyGraph:
    """Undirected neighbor graph over n spots, no self-loops.

    Stores both the edge set (for within-cluster edge counting) and
    per-node neighbor arrays (for the sequential membership update).
    """

    def __init__(self, n: int, edges: Sequence[tuple[int, int]]):
        if n < 1:
            raise ValidationError("graph needs at least one node")
        self.n = int(n)
        edge_set: set[tuple[int, int]] = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValidationError(f"self-loop at node {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise ValidationError(f"edge ({a},{b}) out of range")
            edge_set.add((min(a, b), max(a, b)))
        self.edges = frozenset(edge_set)
        nbrs: list[list[int]] = [[] for _ in range(n)]
        for a, b in self.edges:
            nbrs[a].append(b)
            nbrs[b].append(a)
        self.neighbors = [np.array(sorted(v), dtype=np.int64) for v in nbrs]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def within_cluster_edges(self, z: np.ndarray, n_clusters: int) -> np.ndarray:
        """Count edges whose both endpoints share label h, for h = 0..H-1."""
        counts = np.zeros(n_clusters, dtype=np.int64)
        for a, b in self.edges:
            if z[a] == z[b]:
                counts[z[a]] += 1
        return counts


@dataclass
class PartitionState:
    """Cluster labels over n spots with no empty clusters after compaction."""

    z: np.ndarray
    H: int = 0
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)
        if self.H == 0:
            self.z = canonicalize_labels(self.z)
            self.H = int(self.z.max()) + 1 if len(self.z) else 0
            self.counts = np.bincount(self.z, minlength=self.H).astype(np.int64)
        self.validate()

    def validate(self):
        if len(self.z) == 0:
            raise ValidationError("empty partition")
        if self.counts.sum() != len(self.z):
            raise ValidationError("cluster counts do not sum to n")
        if np.any(self.counts <= 0):
            raise ValidationError("empty cluster present; compact labels first")
        if self.z.min() < 0 or self.z.max() >= self.H:
            raise ValidationError("labels out of range")

    @property
    def n(self) -> int:
        return len(self.z)

    def copy(self) -> "PartitionState":
        return PartitionState(self.z.copy(), self.H, self.counts.copy())


@dataclass
class LatentFactors:
    """q x n latent factor matrix; column i belongs to spot i."""

    Y: np.ndarray

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim != 2:
            raise ValidationError("Y must be a q x n matrix")
        if not np.all(np.isfinite(self.Y)):
            raise ValidationError("latent factors must be finite")

    @property
    def q(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]


class FactorModelParams:
    """Loadings, residual variances, component means and shared covariance.

    The Cholesky factor of Sigma is cached since every conditional density
    needs Sigma^{-1} and log|Sigma|.
    """

    def __init__(self, W: np.ndarray, Lambda: np.ndarray, mu: np.ndarray,
                 Sigma: np.ndarray):
        self.W = np.asarray(W, dtype=np.float64)
        self.Lambda = np.asarray(Lambda, dtype=np.float64)
        self.mu = np.asarray(mu, dtype=np.float64)
        self.Sigma = np.asarray(Sigma, dtype=np.float64)
        self._chol: Optional[np.ndarray] = None
        self.validate()

    def validate(self):
        p, q = self.W.shape
        if self.Lambda.shape != (p,):
            raise ValidationError("Lambda must be a length-p vector")
        if np.any(self.Lambda <= 0):
            raise ValidationError("all residual variances must be positive")
        if self.mu.ndim != 2 or self.mu.shape[1] != q:
            raise ValidationError("mu must be H x q")
        if self.Sigma.shape != (q, q):
            raise ValidationError("Sigma must be q x q")
        if not np.allclose(self.Sigma, self.Sigma.T):
            raise ValidationError("Sigma must be symmetric")

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def q(self) -> int:
        return self.W.shape[1]

    def set_sigma(self, Sigma: np.ndarray):
        self.Sigma = np.asarray(Sigma, dtype=np.float64)
        self._chol = None

    def sigma_chol(self) -> np.ndarray:
        """Lower Cholesky factor of Sigma; raises NumericalError if not PD."""
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.Sigma)
            except np.linalg.LinAlgError as e:
                raise NumericalError("Sigma is not positive definite") from e
        return self._chol

    def copy(self) -> "FactorModelParams":
        return FactorModelParams(self.W.copy(), self.Lambda.copy(),
                                 self.mu.copy(), self.Sigma.copy())


def shifted_poisson_log_pmf(lam: float = 1.0) -> Callable[[int], float]:
    """log pmf of m where m - 1 ~ Poisson(lam), i.e. m >= 1."""
    from scipy.special import gammaln

    log_lam = np.log(lam) if lam > 0 else -np.inf

    def log_pmf(m: int) -> float:
        if m < 1:
            return -np.inf
        k = m - 1
        return k * log_lam - lam - float(gammaln(k + 1))

    return log_pmf


VALID_FAMILIES = ("DP", "PY", "MFM")


@dataclass
class PriorConfig:
    """Gibbs-type partition prior plus the MRF smoothness settings.

    family "DP" requires delta = 0; "PY" requires delta in [0, 1) and
    beta > -delta (delta < 0 only with allow_nonstandard_py); "MFM"
    requires delta = -beta < 0.  mrf_d >= 0 scales the within-cluster
    edge reward; mrf_g is the per-cluster abundance offset (scalar applied
    to every cluster).
    """

    family: str
    beta: float = 1.0
    delta: float = 0.0
    mfm_log_pmf: Callable[[int], float] = field(
        default_factory=shifted_poisson_log_pmf)
    mrf_d: float = 0.0
    mrf_g: float = 1.0
    allow_nonstandard_py: bool = False
    truncation_tol: float = 1e-12

    def __post_init__(self):
        if self.family not in VALID_FAMILIES:
            raise ValidationError(
                f"unknown prior family {self.family!r}; expected one of "
                f"{VALID_FAMILIES}")
        if not self.delta < 1:
            raise ValidationError("delta must be < 1")
        if self.mrf_d < 0:
            raise ValidationError("mrf_d must be >= 0")
        if self.family == "DP":
            if self.delta != 0:
                raise ValidationError("DP requires delta = 0")
            if self.beta <= 0:
                raise ValidationError("DP requires beta > 0")
        elif self.family == "PY":
            if self.delta < 0 and not self.allow_nonstandard_py:
                raise ValidationError(
                    "PY requires delta in [0, 1); pass allow_nonstandard_py "
                    "to evaluate the formula at delta < 0 anyway")
            if self.beta <= -self.delta:
                raise ValidationError("PY requires beta > -delta")
        elif self.family == "MFM":
            if not (self.delta < 0 and abs(self.delta + self.beta) < 1e-12):
                raise ValidationError("MFM requires delta = -beta < 0")


@dataclass
class HyperParams:
    """Hyperparameters of the factor-model priors and latent dimension."""

    q: int
    tau_w: float = 1.0
    tau_mu: float = 1.0
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.q < 1:
            raise ValidationError("q must be >= 1")
        for name in ("tau_w", "tau_mu", "a", "b"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")


@dataclass
class ChainState:
    """Full MCMC state for one iteration."""

    partition: PartitionState
    factors: LatentFactors
    params: FactorModelParams

    def validate(self):
        if self.params.mu.shape[0] != self.partition.H:
            raise ValidationError("mu row count must equal H")
        if self.factors.n != self.partition.n:
            raise ValidationError("factor column count must equal spot count")
        if self.factors.q != self.params.q:
            raise ValidationError("latent dimension mismatch")

    def copy(self) -> "ChainState":
        return ChainState(self.partition.copy(),
                          LatentFactors(self.factors.Y.copy()),
                          self.params.copy())

    def to_bytes(self) -> bytes:
        """Serialize all arrays; round-trips bit-identically."""
        buf = io.BytesIO()
        np.savez(buf,
                 z=self.partition.z, H=np.int64(self.partition.H),
                 counts=self.partition.counts, Y=self.factors.Y,
                 W=self.params.W, Lambda=self.params.Lambda,
                 mu=self.params.mu, Sigma=self.params.Sigma)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ChainState":
        with np.load(io.BytesIO(data)) as f:
            part = PartitionState(f["z"], int(f["H"]), f["counts"])
            return cls(part, LatentFactors(f["Y"]),
                       FactorModelParams(f["W"], f["Lambda"], f["mu"],
                                         f["Sigma"]))


@dataclass(frozen=True)
class TraceRecord:
    """One kept MCMC iteration."""

    iteration: int
    z: np.ndarray
    H: int
    log_score: float


@dataclass
class ChainTrace:
    """Kept iterations of one chain plus the final full state."""

    records: list[TraceRecord]
    burn_in: int
    thin: int
    seed: int
    final_state: Optional[ChainState] = None

    def __post_init__(self):
        if not self.records:
            raise ValidationError("trace has no kept iterations")
        n = len(self.records[0].z)
        for r in self.records:
            if len(r.z) != n:
                raise ValidationError("inconsistent snapshot lengths in trace")

    @property
    def n(self) -> int:
        return len(self.records[0].z)

    @property
    def n_kept(self) -> int:
        return len(self.records)
