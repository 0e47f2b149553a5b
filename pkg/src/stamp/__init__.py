"""Particle-based task and motion planning with Stein variational inference."""
from . import diffcore  # noqa: F401  (enables float64 before anything else)

__version__ = "0.1.0"
