"""Synthetic dataset generation: Potts label patterns on lattices plus
factor-model expression matrices under the strong/weak signal regimes."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (AdjacencyGraph, ExpressionMatrix, SpatialCoords,
                   ValidationError)
from .ingest import (NeighborRule, build_graph, write_coords,
                     write_expression, write_labels)

__all__ = [
    "SimConfig",
    "SimDataset",
    "lattice_coords",
    "potts_pattern",
    "generate_dataset",
    "write_dataset",
]

SIGNAL_REGIMES = {
    # (component mean scale, latent covariance scale)
    "strong": (5.0, 8.0),
    "weak": (3.0, 6.0),
}


@dataclass
class SimConfig:
    lattice: str = "square(40)"      # square(m) or triangle(m)
    H0: int = 3
    potts_d: float = 1.2
    potts_sweeps: int = 500
    p: int = 2000
    q: int = 10
    signal: str = "strong"           # strong | weak | custom(mu,sigma)
    seed: int = 0

    def __post_init__(self):
        if self.H0 < 1:
            raise ValidationError("H0 must be >= 1")
        if not self.p > self.q >= 1:
            raise ValidationError("need p > q >= 1")
        if self.potts_sweeps < 1:
            raise ValidationError("potts_sweeps must be >= 1")
        self.parse_lattice()
        self.signal_params()

    def parse_lattice(self) -> tuple[str, int]:
        m = re.fullmatch(r"(square|triangle)\((\d+)\)", self.lattice.strip())
        if not m:
            raise ValidationError(
                f"lattice must be square(m) or triangle(m), got "
                f"{self.lattice!r}")
        return m.group(1), int(m.group(2))

    def signal_params(self) -> tuple[float, float]:
        if self.signal in SIGNAL_REGIMES:
            return SIGNAL_REGIMES[self.signal]
        m = re.fullmatch(r"custom\(([^,]+),([^)]+)\)", self.signal.strip())
        if not m:
            raise ValidationError(
                f"signal must be strong, weak or custom(mu,sigma), got "
                f"{self.signal!r}")
        return float(m.group(1)), float(m.group(2))


@dataclass
class SimDataset:
    X: ExpressionMatrix
    coords: SpatialCoords
    truth: np.ndarray               # 0-based labels
    W: np.ndarray
    Lambda: np.ndarray
    mu: np.ndarray
    Sigma: np.ndarray
    Y: np.ndarray
    config: SimConfig


def lattice_coords(kind: str, m: int) -> SpatialCoords:
    """Integer m x m grid coordinates (both square and offset-hex lattices
    use the same integer grid; the neighbor rule differs)."""
    xs, ys = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    return SpatialCoords(np.column_stack([xs.ravel(), ys.ravel()]).astype(float))


def potts_pattern(graph: AdjacencyGraph, H0: int, potts_d: float, sweeps: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Gibbs-sample an H0-state Potts configuration on the graph.

    Starts from i.i.d. uniform labels and runs full sweeps of
    P(z_i = h | rest) proportional to exp(potts_d * same-label neighbors).
    Returns the final 0-based label vector.
    """
    n = graph.n
    z = rng.integers(0, H0, size=n)
    if potts_d == 0.0 or H0 == 1:
        return z
    for _ in range(sweeps):
        for i in range(n):
            counts = np.zeros(H0)
            for j in graph.neighbors[i]:
                counts[z[j]] += 1
            w = potts_d * counts
            probs = np.exp(w - w.max())
            cdf = np.cumsum(probs)
            z[i] = np.searchsorted(cdf, rng.random() * cdf[-1], side="right")
    return z


def generate_dataset(cfg: SimConfig,
                     truth: Optional[np.ndarray] = None,
                     coords: Optional[SpatialCoords] = None) -> SimDataset:
    """Generate a synthetic dataset under the configured regime.

    Labels come from a Potts pattern on the configured lattice unless an
    external (truth, coords) pair is supplied.  Component means are
    mu_h = s * e_h, the latent covariance is c * I_q, loadings are standard
    normal, and residual variances are drawn from IG(2, 1).
    """
    rng = np.random.default_rng(cfg.seed)
    s, c = cfg.signal_params()
    if cfg.H0 > cfg.q:
        raise ValidationError(
            "H0 must not exceed q so that mu_h = s * e_h is well-defined")
    if truth is None or coords is None:
        kind, m = cfg.parse_lattice()
        coords = lattice_coords(kind, m)
        rule = NeighborRule("square4" if kind == "square" else "triangle6")
        graph = build_graph(coords, rule)
        truth = potts_pattern(graph, cfg.H0, cfg.potts_d, cfg.potts_sweeps,
                              rng)
    else:
        truth = np.asarray(truth, dtype=np.int64)
        if len(truth) != coords.n:
            raise ValidationError("truth length does not match coords")
    n = len(truth)
    q, p = cfg.q, cfg.p

    mu = np.zeros((cfg.H0, q))
    for h in range(cfg.H0):
        mu[h, h] = s
    Sigma = c * np.eye(q)
    L = np.sqrt(c) * np.eye(q)
    Y = mu[truth].T + L @ rng.standard_normal((q, n))
    W = rng.standard_normal((p, q))
    Lambda = 1.0 / rng.gamma(2.0, 1.0, size=p)     # IG(2, 1)
    eps = np.sqrt(Lambda)[:, None] * rng.standard_normal((p, n))
    X = W @ Y + eps

    gene_ids = [f"g{j + 1}" for j in range(p)]
    spot_ids = [f"s{i + 1}" for i in range(n)]
    expr = ExpressionMatrix(X, gene_ids, spot_ids)
    return SimDataset(expr, coords, truth, W, Lambda, mu, Sigma, Y, cfg)


def write_dataset(ds: SimDataset, out_dir) -> dict[str, Path]:
    """Write expression/coords/truth CSVs and a params.json sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "expression": out / "expression.csv",
        "coords": out / "coords.csv",
        "truth": out / "truth.csv",
        "params": out / "params.json",
    }
    write_expression(paths["expression"], ds.X)
    write_coords(paths["coords"], ds.coords, ds.X.spot_ids)
    write_labels(paths["truth"], ds.X.spot_ids, (ds.truth + 1).tolist())
    params = {
        "config": {
            "lattice": ds.config.lattice, "H0": ds.config.H0,
            "potts_d": ds.config.potts_d,
            "potts_sweeps": ds.config.potts_sweeps,
            "p": ds.config.p, "q": ds.config.q,
            "signal": ds.config.signal, "seed": ds.config.seed,
        },
        "W": ds.W.tolist(),
        "Lambda": ds.Lambda.tolist(),
        "mu": ds.mu.tolist(),
        "Sigma": ds.Sigma.tolist(),
        "Y": ds.Y.tolist(),
    }
    with open(paths["params"], "w", encoding="utf-8") as f:
        json.dump(params, f)
    return paths
