"""Distributed persistent cohomology of lower-star filtrations on 3D grids."""

from .diagram import (
    PersistencePair,
    diagrams_equal,
    extract_pairs,
    oracle_cohomology_diagram,
    oracle_homology_diagram,
)
from .errors import ConfigError, DataCorruptionError, InternalError, ProtocolError
from .filtration import Cell, Grid, cell_key, cofacets, compare_matrix_order, facets
from .pipeline import PipelineOptions, RunStats, compute_diagram

__all__ = [
    "Cell",
    "ConfigError",
    "DataCorruptionError",
    "Grid",
    "InternalError",
    "PersistencePair",
    "PipelineOptions",
    "ProtocolError",
    "RunStats",
    "cell_key",
    "cofacets",
    "compare_matrix_order",
    "compute_diagram",
    "diagrams_equal",
    "extract_pairs",
    "facets",
    "oracle_cohomology_diagram",
    "oracle_homology_diagram",
]
