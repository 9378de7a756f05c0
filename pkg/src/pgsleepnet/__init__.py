"""Product spatio-temporal graph learning for sleep staging."""

__version__ = "0.1.0"
