"""Placement and tuning of grid-following and grid-forming virtual inertia."""

__version__ = "0.1.0"
