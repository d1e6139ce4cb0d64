"""Mean-field bilevel estimation of exponential random graph models."""

from .graph_stats import ConfigError, Graph, MeanField, ModelSpec, NumericError, Theta

__all__ = ["ConfigError", "Graph", "MeanField", "ModelSpec", "NumericError", "Theta"]
