"""Tabular rate-distortion and rate-distortion-perception lab."""
from .curve import Curve, RDPoint
from .source import Source, make_source

__all__ = ["Curve", "RDPoint", "Source", "make_source"]
__version__ = "0.1.0"
