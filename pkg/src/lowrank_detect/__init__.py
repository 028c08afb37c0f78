"""Small moving-target detection in image sequences via tensor robust PCA."""

from .detector import DetectConfig, DetectionResult, detect
from .errors import CoverageError, DivergenceError, InvalidArgument
from .rpca import RpcaConfig, RpcaResult, admm_solve
from .scene import SceneSpec, render

__all__ = [
    "CoverageError",
    "DetectConfig",
    "DetectionResult",
    "DivergenceError",
    "InvalidArgument",
    "RpcaConfig",
    "RpcaResult",
    "SceneSpec",
    "admm_solve",
    "detect",
    "render",
]
__version__ = "0.1.0"
