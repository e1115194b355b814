"""Multi-person 3D pose forecasting with a joint-token transformer encoder."""

from .dct import DctBasis, dct_forward, dct_inverse
from .kernels import BACKEND
from .model import ModelConfig, SoMoFormer, preset
from .scene import Scene, SkeletonDef, TrajectoryWindow, load_scene, save_scene

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DctBasis", "ModelConfig", "Scene", "SkeletonDef", "SoMoFormer", "TrajectoryWindow",
    "dct_forward", "dct_inverse", "load_scene", "preset", "save_scene",
]
