"""Moving least squares approximation on scattered points."""

__version__ = "0.1.0"
