"""Spatial mixture-of-factor-analyzers clustering for omics matrices."""

__version__ = "0.1.0"

from .core import (AdjacencyGraph, ChainState, ChainTrace, ExpressionMatrix,
                   HyperParams, LatentFactors, PartitionState, PriorConfig,
                   SpatialCoords)

__all__ = [
    "AdjacencyGraph",
    "ChainState",
    "ChainTrace",
    "ExpressionMatrix",
    "HyperParams",
    "LatentFactors",
    "PartitionState",
    "PriorConfig",
    "SpatialCoords",
    "__version__",
]
