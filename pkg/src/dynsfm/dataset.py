"""In-memory form of a dataset directory (see ``io`` for the on-disk layout)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, StreamMeta
from .splines import Tracklet, split_tracklet


@dataclass(frozen=True)
class CameraMeta:
    id: int
    fps: float
    frame_count: int
    image_w: int = 1920
    image_h: int = 1080
    prior: Intrinsics | None = None

    @property
    def stream(self) -> StreamMeta:
        return StreamMeta(self.id, self.fps, self.frame_count)

    def default_intrinsics(self, f: float | None = None) -> Intrinsics:
        f = f if f is not None else 1.2 * max(self.image_w, self.image_h) / 2
        return Intrinsics.centered(f, self.image_w, self.image_h)


def _arr(shape, dtype=float):
    return np.zeros(shape, dtype=dtype)


@dataclass(eq=False)
class Dataset:
    cameras: list[CameraMeta]
    match_cams: np.ndarray = field(default_factory=lambda: _arr((0, 2), int))
    match_uv: np.ndarray = field(default_factory=lambda: _arr((0, 4)))
    tr_cam: np.ndarray = field(default_factory=lambda: _arr(0, int))
    tr_obj: np.ndarray = field(default_factory=lambda: _arr(0, int))
    tr_frame: np.ndarray = field(default_factory=lambda: _arr(0, int))
    tr_uv: np.ndarray = field(default_factory=lambda: _arr((0, 2)))
    cp_pair: np.ndarray = field(default_factory=lambda: _arr((0, 2), int))
    cp_uv: np.ndarray = field(default_factory=lambda: _arr((0, 4)))

    def __post_init__(self):
        self.match_cams = np.asarray(self.match_cams, int).reshape(-1, 2)
        self.match_uv = np.asarray(self.match_uv, float).reshape(-1, 4)
        self.tr_cam = np.asarray(self.tr_cam, int).reshape(-1)
        self.tr_obj = np.asarray(self.tr_obj, int).reshape(-1)
        self.tr_frame = np.asarray(self.tr_frame, int).reshape(-1)
        self.tr_uv = np.asarray(self.tr_uv, float).reshape(-1, 2)
        self.cp_pair = np.asarray(self.cp_pair, int).reshape(-1, 2)
        self.cp_uv = np.asarray(self.cp_uv, float).reshape(-1, 4)

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)

    def camera_index(self, cam_id: int) -> int:
        for k, c in enumerate(self.cameras):
            if c.id == cam_id:
                return k
        raise KeyError(cam_id)

    def pair_matches(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Matches between camera ids i and j, oriented so the first block is in camera i."""
        fwd = (self.match_cams[:, 0] == i) & (self.match_cams[:, 1] == j)
        bwd = (self.match_cams[:, 0] == j) & (self.match_cams[:, 1] == i)
        x1 = np.vstack([self.match_uv[fwd, :2], self.match_uv[bwd, 2:]])
        x2 = np.vstack([self.match_uv[fwd, 2:], self.match_uv[bwd, :2]])
        return x1, x2

    def pair_controls(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        fwd = (self.cp_pair[:, 0] == i) & (self.cp_pair[:, 1] == j)
        bwd = (self.cp_pair[:, 0] == j) & (self.cp_pair[:, 1] == i)
        x1 = np.vstack([self.cp_uv[fwd, :2], self.cp_uv[bwd, 2:]])
        x2 = np.vstack([self.cp_uv[fwd, 2:], self.cp_uv[bwd, :2]])
        return x1, x2

    def tracklets(self, cam_id: int, max_gap: float | None = None) -> list[Tracklet]:
        """Tracklets of one camera, optionally split at frame gaps larger than ``max_gap``."""
        out = []
        sel = self.tr_cam == cam_id
        for obj in np.unique(self.tr_obj[sel]):
            m = sel & (self.tr_obj == obj)
            if m.sum() < 2:
                continue
            order = np.argsort(self.tr_frame[m], kind="stable")
            tr = Tracklet(cam_id, int(obj), self.tr_frame[m][order], self.tr_uv[m][order])
            out.extend(split_tracklet(tr, max_gap) if max_gap is not None else [tr])
        return out

    def copy(self, **changes) -> "Dataset":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        kw["cameras"] = list(kw["cameras"])
        return Dataset(**{k: (np.array(v) if isinstance(v, np.ndarray) else v) for k, v in kw.items()})
