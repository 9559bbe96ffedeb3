"""Transfer learning for high-dimensional vector autoregressions."""
__version__ = "0.1.0"
