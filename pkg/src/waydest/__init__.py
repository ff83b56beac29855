"""AIS destination estimation: annotation, refinement, grid sequences and the WAY model."""

__version__ = "0.1.0"
