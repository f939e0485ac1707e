"""Spatial probit stick-breaking mixtures for mixed-type areal data."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
