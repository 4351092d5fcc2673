"""File ingestion, preprocessing, and spatial graph construction.

File formats (CSV, UTF-8, comma-separated, '.' decimal point, header row):

* expression:  ``gene_id,<spot ids...>`` then one row per gene
* coordinates: ``spot_id,x,y``
* labels:      ``spot_id,label``
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (AdjacencyGraph, ExpressionMatrix, SpatialCoords,
                   ValidationError)

__all__ = [
    "IngestConfig",
    "NeighborRule",
    "parse_neighbor_rule",
    "read_expression",
    "read_coords",
    "read_labels",
    "log_normalize",
    "select_hvg",
    "build_graph",
    "write_expression",
    "write_coords",
    "write_labels",
]


class IngestError(ValidationError):
    """Malformed input file."""


@dataclass(frozen=True)
class NeighborRule:
    """Adjacency rule: square4 | square8 | triangle6 | radius(c0) | knn(k)."""

    kind: str
    c0: float = 0.0
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("square4", "square8", "triangle6", "radius", "knn"):
            raise ValidationError(f"unknown neighbor rule {self.kind!r}")
        if self.kind == "radius" and self.c0 <= 0:
            raise ValidationError("radius rule requires c0 > 0")
        if self.kind == "knn" and self.k < 1:
            raise ValidationError("knn rule requires k >= 1")


def parse_neighbor_rule(text: str) -> NeighborRule:
    """Parse e.g. 'square4', 'radius(1.5)', 'knn(6)'."""
    text = text.strip()
    m = re.fullmatch(r"(\w+)(?:\(([^)]*)\))?", text)
    if not m:
        raise ValidationError(f"cannot parse neighbor rule {text!r}")
    kind, arg = m.group(1), m.group(2)
    if kind in ("square4", "square8", "triangle6"):
        return NeighborRule(kind)
    try:
        if kind == "radius":
            return NeighborRule("radius", c0=float(arg))
        if kind == "knn":
            return NeighborRule("knn", k=int(arg))
    except (TypeError, ValueError) as e:
        raise ValidationError(f"bad argument in neighbor rule {text!r}") from e
    raise ValidationError(f"unknown neighbor rule {kind!r}")


@dataclass
class IngestConfig:
    normalize: bool = False
    n_hvg: Optional[int] = 2000
    neighbor_rule: NeighborRule = NeighborRule("square4")


def _read_csv_rows(path) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.reader(f))
    except OSError as e:
        raise IngestError(f"cannot read {path}: {e}") from e


def read_expression(path) -> ExpressionMatrix:
    """Read a gene-by-spot expression CSV."""
    rows = _read_csv_rows(path)
    if not rows:
        raise IngestError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2:
        raise IngestError(f"{path}: header must list at least one spot ID")
    spot_ids = header[1:]
    gene_ids: list[str] = []
    values = np.empty((len(rows) - 1, len(spot_ids)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise IngestError(
                f"{path}: row {r} has {len(row)} fields, expected "
                f"{len(header)}")
        gene_ids.append(row[0])
        for c, cell in enumerate(row[1:], start=2):
            try:
                values[r - 2, c - 2] = float(cell)
            except ValueError:
                raise IngestError(
                    f"{path}: non-numeric cell {cell!r} at row {r}, "
                    f"column {c}") from None
    try:
        return ExpressionMatrix(values, gene_ids, spot_ids)
    except ValidationError as e:
        raise IngestError(f"{path}: {e}") from e


def read_coords(path, expr: ExpressionMatrix) -> SpatialCoords:
    """Read a spot_id,x,y CSV and align rows to the expression spot order."""
    rows = _read_csv_rows(path)
    if not rows:
        raise IngestError(f"{path}: empty file")
    by_id: dict[str, tuple[float, float]] = {}
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise IngestError(f"{path}: row {r} must have spot_id,x,y")
        sid = row[0]
        if sid in by_id:
            raise IngestError(f"{path}: duplicate spot ID {sid!r} at row {r}")
        try:
            by_id[sid] = (float(row[1]), float(row[2]))
        except ValueError:
            raise IngestError(
                f"{path}: non-numeric coordinate at row {r}") from None
    coords = np.empty((expr.n, 2))
    for i, sid in enumerate(expr.spot_ids):
        if sid not in by_id:
            raise IngestError(f"{path}: missing coordinates for spot {sid!r}")
        coords[i] = by_id[sid]
    return SpatialCoords(coords)


def read_labels(path, spot_ids: Optional[list[str]] = None) -> tuple[list[str], list[str]]:
    """Read a spot_id,label CSV; returns (spot_ids, labels).

    When spot_ids is given, rows are joined by ID to that order and every
    ID must be present.
    """
    rows = _read_csv_rows(path)
    if not rows:
        raise IngestError(f"{path}: empty file")
    by_id: dict[str, str] = {}
    order: list[str] = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise IngestError(f"{path}: row {r} must have spot_id,label")
        if row[0] in by_id:
            raise IngestError(f"{path}: duplicate spot ID {row[0]!r}")
        by_id[row[0]] = row[1]
        order.append(row[0])
    if spot_ids is None:
        return order, [by_id[s] for s in order]
    missing = [s for s in spot_ids if s not in by_id]
    if missing:
        raise IngestError(f"{path}: missing labels for spots {missing}")
    return list(spot_ids), [by_id[s] for s in spot_ids]


def log_normalize(expr: ExpressionMatrix) -> ExpressionMatrix:
    """Library-size normalize then log1p:  x' = log(1 + x * median(s)/s_i).

    s_i is the column sum.  Columns with zero library size are rejected.
    """
    X = expr.values
    if np.any(X < 0):
        raise ValidationError("log_normalize requires nonnegative input")
    s = X.sum(axis=0)
    zero = np.flatnonzero(s == 0)
    if len(zero):
        raise ValidationError(
            f"all-zero expression column(s) at spot(s) "
            f"{[expr.spot_ids[i] for i in zero[:5]]}")
    scale = np.median(s) / s
    return ExpressionMatrix(np.log1p(X * scale[None, :]), expr.gene_ids,
                            expr.spot_ids)


def select_hvg(expr: ExpressionMatrix, n_hvg: int) -> ExpressionMatrix:
    """Keep the n_hvg rows with largest sample variance, original order.

    Ties are broken in favor of earlier rows.
    """
    if n_hvg > expr.p:
        raise ValidationError(f"n_hvg={n_hvg} exceeds gene count {expr.p}")
    var = expr.values.var(axis=1, ddof=1)
    # stable sort on -variance keeps earlier rows first among ties
    ranked = np.argsort(-var, kind="stable")[:n_hvg]
    keep = np.sort(ranked)
    return ExpressionMatrix(expr.values[keep],
                            [expr.gene_ids[i] for i in keep], expr.spot_ids)


def _lattice_index(coords: np.ndarray) -> dict[tuple[int, int], int]:
    grid = np.rint(coords).astype(np.int64)
    if not np.allclose(coords, grid):
        raise ValidationError("lattice rules require integer grid coordinates")
    index: dict[tuple[int, int], int] = {}
    for i, (x, y) in enumerate(grid):
        index[(int(x), int(y))] = i
    return index


_SQUARE4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
_DIAG = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def build_graph(coords: SpatialCoords, rule: NeighborRule) -> AdjacencyGraph:
    """Construct the symmetric neighbor graph under the given rule.

    square4 is rook adjacency; square8 adds diagonals; triangle6 is the
    6-neighborhood of an odd-r offset hexagonal lattice; radius(c0) links
    pairs with strict Euclidean distance < c0; knn(k) keeps an edge only
    when both endpoints list each other among their k nearest (ties broken
    by smaller index).
    """
    n = coords.n
    if n == 0:
        raise ValidationError("empty coordinates")
    C = coords.coords
    edges: list[tuple[int, int]] = []
    if rule.kind in ("square4", "square8", "triangle6"):
        index = _lattice_index(C)
        for (x, y), i in index.items():
            if rule.kind == "square4":
                offsets = _SQUARE4
            elif rule.kind == "square8":
                offsets = _SQUARE4 + _DIAG
            else:  # odd-r offset rows: shift depends on row parity
                if y % 2 == 0:
                    offsets = ((1, 0), (-1, 0), (0, 1), (0, -1), (-1, 1),
                               (-1, -1))
                else:
                    offsets = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1),
                               (1, -1))
            for dx, dy in offsets:
                j = index.get((x + dx, y + dy))
                if j is not None and j != i:
                    edges.append((i, j))
    elif rule.kind == "radius":
        d2 = ((C[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        ii, jj = np.nonzero(d2 < rule.c0 ** 2)
        edges = [(int(a), int(b)) for a, b in zip(ii, jj) if a < b]
    elif rule.kind == "knn":
        k = min(rule.k, n - 1)
        d2 = ((C[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        nearest: list[set[int]] = []
        for i in range(n):
            order = sorted((d2[i, j], j) for j in range(n) if j != i)
            nearest.append({j for _, j in order[:k]})
        for i in range(n):
            for j in nearest[i]:
                if i < j and i in nearest[j]:
                    edges.append((i, j))
    return AdjacencyGraph(n, edges)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_expression(path, expr: ExpressionMatrix):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["gene_id", *expr.spot_ids])
        for j, gid in enumerate(expr.gene_ids):
            w.writerow([gid, *(_fmt(v) for v in expr.values[j])])


def write_coords(path, coords: SpatialCoords, spot_ids: list[str]):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["spot_id", "x", "y"])
        for sid, (x, y) in zip(spot_ids, coords.coords):
            w.writerow([sid, _fmt(x), _fmt(y)])


def write_labels(path, spot_ids: list[str], labels):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["spot_id", "label"])
        for sid, lab in zip(spot_ids, labels):
            w.writerow([sid, lab])
