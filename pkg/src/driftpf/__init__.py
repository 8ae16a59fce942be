"""Two-stage implicit equal-weights particle filter for a rotating shallow-water ocean model."""

from .grid import CoarseGrid, ModelGrid, OceanState, PhysParams

__version__ = "0.1.0"

__all__ = ["CoarseGrid", "ModelGrid", "OceanState", "PhysParams", "__version__"]
