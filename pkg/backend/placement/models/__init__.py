from .geometry import GridIndex, ImageDims, PlacementBox, ScaleGrid
from .heatmap import Heatmap3D, Peak
from .loss import MarginSpec
from .report import EvalReport
from .scene import GroundTruth, ObjectSpec, OracleParams, Scene, SceneMeta

__all__ = [
    "GridIndex",
    "ImageDims",
    "PlacementBox",
    "ScaleGrid",
    "Heatmap3D",
    "Peak",
    "MarginSpec",
    "EvalReport",
    "GroundTruth",
    "ObjectSpec",
    "OracleParams",
    "Scene",
    "SceneMeta",
]
