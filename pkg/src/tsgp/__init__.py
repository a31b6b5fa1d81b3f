"""Evolved feature-learning programs for univariate time series classification."""

__version__ = "0.1.0"
TOOL_ID = f"tsgp/{__version__}"
