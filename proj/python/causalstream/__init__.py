"""Streaming causal inference: online ATE estimation from summary statistics,
sandwich variances, and group-sequential safety monitoring."""

from causalstream._core import *  # noqa: F401,F403

__version__ = "0.1.0"
