"""Global and per-pixel guidance over closed-form Gaussian-mixture score models."""

__version__ = "0.1.0"
