"""Scene container shared by reconstruction, bundle adjustment and evaluation.

Observations are stored as flat arrays so the optimizer can vectorize over
them. A static observation is a row ``(camera, point, u, v)``, a dynamic one
is ``(camera, object, frame, u, v)`` where ``frame`` counts frames of that
camera's own clock. All pixels are raw (distorted).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Camera, Pose
from .splines import SplineCurve, TimeMap, map_time


class ReconstructionMode(str, enum.Enum):
    SO = "so"
    SD_UN = "sd_un"
    SD_SC = "sd_sc"

    @classmethod
    def parse(cls, value) -> "ReconstructionMode":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())

    @property
    def uses_dynamic(self) -> bool:
        return self is not ReconstructionMode.SO


@dataclass(eq=False)
class DynamicObject:
    object_id: int
    curve: SplineCurve  # 3D, parametrized by reference-clock frames


def _empty(shape, dtype=float):
    return np.zeros(shape, dtype=dtype)


@dataclass(eq=False)
class Scene:
    cameras: list[Camera]
    time_maps: list[TimeMap]
    points: np.ndarray = field(default_factory=lambda: _empty((0, 3)))
    static_cam: np.ndarray = field(default_factory=lambda: _empty(0, int))
    static_pt: np.ndarray = field(default_factory=lambda: _empty(0, int))
    static_uv: np.ndarray = field(default_factory=lambda: _empty((0, 2)))
    objects: list[DynamicObject] = field(default_factory=list)
    dyn_cam: np.ndarray = field(default_factory=lambda: _empty(0, int))
    dyn_obj: np.ndarray = field(default_factory=lambda: _empty(0, int))
    dyn_frame: np.ndarray = field(default_factory=lambda: _empty(0))
    dyn_uv: np.ndarray = field(default_factory=lambda: _empty((0, 2)))
    reference: int = 0
    scale_camera: int | None = None
    focal_init: list[float] | None = None
    mode: str | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, float).reshape(-1, 3)
        self.static_cam = np.asarray(self.static_cam, int).reshape(-1)
        self.static_pt = np.asarray(self.static_pt, int).reshape(-1)
        self.static_uv = np.asarray(self.static_uv, float).reshape(-1, 2)
        self.dyn_cam = np.asarray(self.dyn_cam, int).reshape(-1)
        self.dyn_obj = np.asarray(self.dyn_obj, int).reshape(-1)
        self.dyn_frame = np.asarray(self.dyn_frame, float).reshape(-1)
        self.dyn_uv = np.asarray(self.dyn_uv, float).reshape(-1, 2)

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)

    def copy(self, **changes) -> "Scene":
        arrays = {k: np.array(getattr(self, k)) for k in
                  ("points", "static_cam", "static_pt", "static_uv", "dyn_cam", "dyn_obj", "dyn_frame", "dyn_uv")}
        s = replace(self, cameras=list(self.cameras), time_maps=list(self.time_maps),
                    objects=[DynamicObject(o.object_id, o.curve) for o in self.objects],
                    focal_init=None if self.focal_init is None else list(self.focal_init), **arrays)
        for k, v in changes.items():
            setattr(s, k, v)
        s.__post_init__()
        return s

    def dyn_times(self) -> np.ndarray:
        """Reference-clock time of every dynamic observation."""
        t = np.empty(len(self.dyn_frame))
        for i, tm in enumerate(self.time_maps):
            sel = self.dyn_cam == i
            t[sel] = map_time(tm, self.dyn_frame[sel])
        return t

    def dynamic_index_set(self) -> np.ndarray:
        """Mask of dynamic observations whose mapped time lies in the object's curve domain."""
        t = self.dyn_times()
        mask = np.zeros(len(t), bool)
        for k, obj in enumerate(self.objects):
            sel = self.dyn_obj == k
            mask[sel] = obj.curve.contains(t[sel])
        return mask

    def validate(self):
        """Raise ``ValueError`` on dangling observation indices or a broken gauge."""
        n, L, Q = self.n_cameras, len(self.points), len(self.objects)
        if len(self.time_maps) != n:
            raise ValueError("one time map per camera required")
        for name, arr, hi in (("static_cam", self.static_cam, n), ("static_pt", self.static_pt, L),
                              ("dyn_cam", self.dyn_cam, n), ("dyn_obj", self.dyn_obj, Q)):
            if len(arr) and (arr.min() < 0 or arr.max() >= hi):
                raise ValueError(f"{name} refers to a missing entry")
        if len(self.static_cam) != len(self.static_pt) or len(self.static_cam) != len(self.static_uv):
            raise ValueError("static observation arrays differ in length")
        if not (len(self.dyn_cam) == len(self.dyn_obj) == len(self.dyn_frame) == len(self.dyn_uv)):
            raise ValueError("dynamic observation arrays differ in length")
        return True

    # gauge -----------------------------------------------------------------

    def baseline(self) -> float | None:
        if self.scale_camera is None:
            return None
        return float(np.linalg.norm(self.cameras[self.scale_camera].pose.center
                                    - self.cameras[self.reference].pose.center))

    def transformed(self, R, t, s: float = 1.0) -> "Scene":
        """Apply the similarity ``X -> s R X + t`` to all geometry (cameras inverse-transformed)."""
        R = np.asarray(R, float)
        t = np.asarray(t, float)
        cams = []
        for c in self.cameras:
            Rc = c.pose.R @ R.T
            C = s * R @ c.pose.center + t
            cams.append(c.with_(pose=Pose.from_center(Rc, C)))
        objs = [DynamicObject(o.object_id, o.curve.with_control_points(s * o.curve.control_points @ R.T + t))
                for o in self.objects]
        return self.copy(cameras=cams, points=s * self.points @ R.T + t, objects=objs)

    def normalize_gauge(self) -> "Scene":
        """Move the reference camera to the identity pose and scale the gauge baseline to 1."""
        ref = self.cameras[self.reference].pose
        # X_new = R_ref X + t_ref puts the reference camera at the origin with identity rotation
        out = self.transformed(ref.R, ref.t)
        b = out.baseline()
        if b:
            out = out.transformed(np.eye(3), np.zeros(3), 1.0 / b)
        cams = list(out.cameras)
        cams[self.reference] = cams[self.reference].with_(pose=Pose.identity())
        return out.copy(cameras=cams)
