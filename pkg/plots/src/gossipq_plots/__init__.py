"""Batch figure rendering for experiment trace CSVs."""

from .render import PlotMode, PlotSpec, SchemaError, render

__all__ = ["PlotMode", "PlotSpec", "SchemaError", "render"]
__version__ = "0.1.0"
