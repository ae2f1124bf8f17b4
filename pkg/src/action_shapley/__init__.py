"""Action Shapley data valuation for world-model training sets."""

from .core import (
    AlgoParams,
    PointResult,
    ShapleyReport,
    SubsetMask,
    assemble_report,
    enumerate_subsets,
    exact_shapley,
    p_comp,
    truncated_action_shapley,
)

__version__ = "0.1.0"

__all__ = [
    "AlgoParams",
    "PointResult",
    "ShapleyReport",
    "SubsetMask",
    "assemble_report",
    "enumerate_subsets",
    "exact_shapley",
    "p_comp",
    "truncated_action_shapley",
]
