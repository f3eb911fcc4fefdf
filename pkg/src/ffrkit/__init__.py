"""Multi-fidelity surrogate toolkit for stenosed-vessel hemodynamics."""

__version__ = "0.1.0"
