"""Structure, camera and trajectory reconstruction from unsynchronized, uncalibrated video streams."""
from .bundle import BAReport, LMConfig, ParameterPolicy, numeric_jacobian_check, solve_ba
from .dataset import CameraMeta, Dataset
from .errors import DynSfmError, EstimationError, ValidationError
from .geometry import Camera, Intrinsics, Pose, StreamMeta
from .reconstruct import ReconstructConfig, calibrate_cameras, reconstruct_scene, synchronize
from .scene import DynamicObject, ReconstructionMode, Scene
from .splines import SplineCurve, TimeMap, Tracklet
from .synthgen import SynthConfig, degrade, generate

__version__ = "0.1.0"

__all__ = [
    "BAReport", "Camera", "CameraMeta", "Dataset", "DynSfmError", "DynamicObject", "EstimationError", "Intrinsics",
    "LMConfig", "ParameterPolicy", "Pose", "ReconstructConfig", "ReconstructionMode", "Scene", "SplineCurve",
    "StreamMeta", "SynthConfig", "TimeMap", "Tracklet", "ValidationError", "calibrate_cameras", "degrade",
    "generate", "numeric_jacobian_check", "reconstruct_scene", "solve_ba", "synchronize",
]
