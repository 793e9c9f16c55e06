"""Streamliner synthesis workbench."""
from . import minicp  # noqa: F401  (loads before outcome; the solver imports it)

__version__ = "0.1.0"
