"""grainflow: a from-scratch CNN engine for surface defect inspection."""

__version__ = "0.1.0"
