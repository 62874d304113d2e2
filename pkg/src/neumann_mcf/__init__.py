"""Level-set mean curvature flow with Neumann walls."""
__version__ = "0.1.0"
