"""photonstats: single-photon emitter simulation and time-tag analysis."""

__version__ = "0.1.0"

from . import core, correlate, fitting, interferometry, models, presets, simulate, tags

__all__ = [
    "core",
    "correlate",
    "fitting",
    "interferometry",
    "models",
    "presets",
    "simulate",
    "tags",
    "__version__",
]
