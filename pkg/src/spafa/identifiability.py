"""Numerical oracle for partition identifiability of the latent mixture.

The collapsed score of a partition integrates the component means (normal,
precision scaled by tau) and the shared covariance (Jeffreys prior) out of
the latent-factor likelihood.  Pairwise differences of this score between
partitions are invariant under any nonsingular linear transform of the
latent matrix, which is what makes the cluster membership identifiable
even though the factorization itself is not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NumericalError, PartitionState, ValidationError

__all__ = ["CollapsedScoreInput", "log_f_tau", "invariance_check"]


@dataclass
class CollapsedScoreInput:
    Y0: np.ndarray          # q x n latent matrix
    partition: PartitionState
    tau: float

    def __post_init__(self):
        self.Y0 = np.asarray(self.Y0, dtype=np.float64)
        q, n = self.Y0.shape
        if not q < n:
            raise ValidationError("collapsed score requires q < n")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.partition.n != n:
            raise ValidationError("partition size does not match Y0 columns")


def log_f_tau(inp: CollapsedScoreInput) -> float:
    """Collapsed log score of a partition given latent data, up to a constant.

    sum_h (q/2) log(tau/(tau+n_h))
      - (n/2) log det( sum_h [ S_h + c_h ybar_h ybar_h^T ] )
    with c_h = (n_h^2 + 2 n_h tau - n_h - tau) / (n_h + tau).
    """
    Y0 = inp.Y0
    q, n = Y0.shape
    tau = inp.tau
    part = inp.partition
    total = np.zeros((q, q))
    log_front = 0.0
    for h in range(part.H):
        idx = np.flatnonzero(part.z == h)
        n_h = len(idx)
        Yh = Y0[:, idx]
        ybar = Yh.mean(axis=1)
        R = Yh - ybar[:, None]
        S_h = R @ R.T
        c_h = (n_h * n_h + 2 * n_h * tau - n_h - tau) / (n_h + tau)
        total += S_h + c_h * np.outer(ybar, ybar)
        log_front += 0.5 * q * (np.log(tau) - np.log(tau + n_h))
    sign, logdet = np.linalg.slogdet(total)
    if sign <= 0:
        raise NumericalError(
            "summed scatter matrix is not positive definite (degenerate Y0)")
    return float(log_front - 0.5 * n * logdet)


def invariance_check(Y0: np.ndarray, M: np.ndarray,
                     partitions: list[PartitionState], tau: float) -> float:
    """Max deviation of pairwise score differences under Y0 -> M Y0.

    Zero in exact arithmetic: the transform contributes the same additive
    constant to the score of every partition.
    """
    M = np.asarray(M, dtype=np.float64)
    if abs(np.linalg.det(M)) <= 1e-10:
        raise ValidationError("transform matrix is (near-)singular")
    base = np.array([log_f_tau(CollapsedScoreInput(Y0, p, tau))
                     for p in partitions])
    moved = np.array([log_f_tau(CollapsedScoreInput(M @ Y0, p, tau))
                      for p in partitions])
    worst = 0.0
    for a in range(len(partitions)):
        for b in range(a + 1, len(partitions)):
            dev = abs((moved[a] - moved[b]) - (base[a] - base[b]))
            worst = max(worst, dev)
    return worst
