"""Exact oracles and Glauber sampling for area-tilted line ensembles."""
from .kernels import BACKEND

__version__ = "0.1.0"
