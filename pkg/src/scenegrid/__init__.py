"""Scene generation with a latent floorplan of locally conditioned radiance fields."""

from .generator import GeneratorConfig, LatentGrid, SceneGenerator
from .geometry import CameraPose, GridLayout, Intrinsics, Ray
from .renderer import RadianceSample, RenderResult

__all__ = [
    "CameraPose",
    "GeneratorConfig",
    "GridLayout",
    "Intrinsics",
    "LatentGrid",
    "RadianceSample",
    "Ray",
    "RenderResult",
    "SceneGenerator",
]
