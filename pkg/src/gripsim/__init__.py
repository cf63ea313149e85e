"""Tactile slip prediction and independent per-finger grip stabilization in a planar simulator."""

from .core import CLASSES, ConfigError, Label, RunConfig, fork_rng, load_config

__version__ = "0.1.0"
__all__ = ["CLASSES", "ConfigError", "Label", "RunConfig", "fork_rng", "load_config", "__version__"]
