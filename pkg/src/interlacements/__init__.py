"""Random interlacements on Z^d: potential theory, occupation-time functionals, sampling."""

__version__ = "0.1.0"
