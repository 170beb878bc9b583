"""Hierarchical reinforcement-learning feature selection for tabular data."""

__version__ = "0.1.0"

from .dataset import FeatureTable, FeatureMetadata, SplitPair, load_table, split_table, load_metadata
from .engine import RunConfig, run

__all__ = [
    "FeatureTable",
    "FeatureMetadata",
    "SplitPair",
    "load_table",
    "split_table",
    "load_metadata",
    "RunConfig",
    "run",
    "__version__",
]
