"""Figure regeneration for beamkit sweep outputs (CSV in, images out)."""

from .render import FigureSpec, SchemaError, render, render_directory

__version__ = "0.1.0"
__all__ = ["FigureSpec", "SchemaError", "render", "render_directory"]
