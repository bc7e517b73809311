"""Figure rendering for dicke-ramp CSV outputs."""

__version__ = "0.1.0"

from .render import PlotSpec, RenderError, render
