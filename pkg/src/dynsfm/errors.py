"""Exception hierarchy.

Validation errors map to CLI exit code 2, estimation failures to exit code 3.
Each class carries a stable ``name`` that the CLI prints on standard error.
"""


class DynSfmError(Exception):
    name = "error"


class ValidationError(DynSfmError):
    name = "validation-error"


class InvalidIntrinsicsError(ValidationError):
    name = "invalid-intrinsics"


class GeometryError(DynSfmError):
    name = "geometry-error"


class SingularDistortionError(GeometryError):
    name = "singular-distortion"


class OutOfDomainError(GeometryError):
    name = "out-of-domain"


class BehindCameraError(GeometryError):
    name = "behind-camera"


class DegenerateGeometryError(GeometryError):
    name = "degenerate-geometry"


class DegenerateSampleError(GeometryError):
    name = "degenerate-sample"


class UnderconstrainedFitError(GeometryError):
    name = "underconstrained-fit"


class EstimationError(DynSfmError):
    name = "estimation-failed"


class PoseDisambiguationError(EstimationError):
    name = "pose-disambiguation"


class CalibrationFailedError(EstimationError):
    name = "calibration-failed"


class InsufficientOverlapError(EstimationError):
    name = "insufficient-overlap"


class SyncFailedError(EstimationError):
    name = "sync-failed"


class InitFailedError(EstimationError):
    name = "init-failed"


class BADivergedError(EstimationError):
    name = "ba-diverged"
