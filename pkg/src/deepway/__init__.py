"""Waypoint-based coverage path planning for row-crop occupancy grids."""
__version__ = "0.1.0"
