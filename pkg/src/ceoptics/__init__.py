"""Coded-optics design and evaluation for neuromorphic event cameras."""

__version__ = "0.1.0"

from .config import OpticalConfig

__all__ = ["OpticalConfig", "__version__"]
