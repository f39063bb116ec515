"""On-disk formats: JSON for records, CSV for bulk observations.

Dataset directory layout::

    cameras.json          stream metadata, optional prior intrinsics
    matches.csv           cam_i,cam_j,u1,v1,u2,v2        (raw pixels)
    tracklets.csv         camera_id,object_id,frame,u,v  (raw pixels)
    control_points.csv    pair_id,u1,v1,u2,v2            (pair_id is "i-j")
    truth.json            synthetic ground truth (optional)

All writers use a fixed field order and ``repr`` floats so that equal inputs
give byte-identical files. Rotations are stored as unit quaternions (w, x, y, z).
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .dataset import CameraMeta, Dataset
from .errors import ValidationError
from .geometry import Camera, Intrinsics, Pose, StreamMeta
from .scene import DynamicObject, Scene
from .splines import SplineCurve, TimeMap

QUAT_TOL = 1e-6

MATCH_HEADER = ["cam_i", "cam_j", "u1", "v1", "u2", "v2"]
TRACKLET_HEADER = ["camera_id", "object_id", "frame", "u", "v"]
CONTROL_HEADER = ["pair_id", "u1", "v1", "u2", "v2"]


# ---------------------------------------------------------------------------
# primitives


def _num(x):
    """Plain Python number for JSON (ints stay ints, floats round-trip exactly)."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(x)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj), encoding="utf-8", newline="\n")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}:{e.lineno}: malformed JSON ({e.msg})") from e


def _field(d: dict, key: str, where: str, kind=float):
    if key not in d:
        raise ValidationError(f"{where}: missing field '{key}'")
    v = d[key]
    try:
        if kind is int:
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise TypeError
            return int(v)
        if kind is float:
            if isinstance(v, bool):
                raise TypeError
            out = float(v)
            if not math.isfinite(out):
                raise TypeError
            return out
        return kind(v)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: field '{key}' has invalid value {v!r}") from None


def quat_from_matrix(R) -> list[float]:
    x, y, z, w = Rotation.from_matrix(np.asarray(R, float)).as_quat()
    q = np.array([w, x, y, z])
    if q[0] < 0 or (q[0] == 0 and q[np.nonzero(q)[0][0]] < 0):
        q = -q
    return [float(v) for v in q]


def matrix_from_quat(q, where: str = "quaternion") -> np.ndarray:
    q = np.asarray(q, float)
    if q.shape != (4,) or not np.isfinite(q).all():
        raise ValidationError(f"{where}: expected four finite numbers")
    n = np.linalg.norm(q)
    if abs(n - 1.0) > QUAT_TOL:
        raise ValidationError(f"{where}: quaternion norm {n:.9f} is not 1 within {QUAT_TOL}")
    q = q / n
    return Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()


def _pose_quat(pose: Pose) -> list[float]:
    # a pose parsed from disk keeps its quaternion so that re-serializing is byte-stable
    cached = getattr(pose, "_quat", None)
    if cached is not None and np.array_equal(matrix_from_quat(cached), pose.R):
        return list(cached)
    return quat_from_matrix(pose.R)


def _pose_from(q, t, where) -> Pose:
    R = matrix_from_quat(q, where)
    pose = Pose(R, np.asarray(t, float))
    object.__setattr__(pose, "_quat", [float(v) for v in q])
    return pose


# ---------------------------------------------------------------------------
# intrinsics and time maps


def intrinsics_to_dict(intr: Intrinsics) -> dict:
    return {"f": _num(intr.f), "cx": _num(intr.cx), "cy": _num(intr.cy), "d0": _num(intr.d0),
            "image_w": int(intr.image_w), "image_h": int(intr.image_h)}


def intrinsics_from_dict(d: dict, where: str, image_w=None, image_h=None) -> Intrinsics:
    w = _field(d, "image_w", where, int) if "image_w" in d or image_w is None else image_w
    h = _field(d, "image_h", where, int) if "image_h" in d or image_h is None else image_h
    f = _field(d, "f", where)
    cx = _field(d, "cx", where) if "cx" in d else w / 2
    cy = _field(d, "cy", where) if "cy" in d else h / 2
    d0 = _field(d, "d0", where) if "d0" in d else 0.0
    try:
        return Intrinsics(f, cx, cy, d0, w, h)
    except ValidationError as e:
        raise ValidationError(f"{where}: {e}") from e


def time_map_to_dict(tm: TimeMap) -> dict:
    return {"alpha": _num(tm.alpha), "beta": _num(tm.beta)}


def time_map_from_dict(d: dict, where: str) -> TimeMap:
    a = _field(d, "alpha", where)
    if a <= 0:
        raise ValidationError(f"{where}: field 'alpha' must be positive")
    return TimeMap(a, _field(d, "beta", where))


# ---------------------------------------------------------------------------
# dataset directory


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])


def _read_csv(path: Path, header, kinds):
    """Rows of a headed CSV with per-column conversion; errors name file, line and field."""
    if not path.exists():
        return []
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        rd = csv.reader(fh)
        try:
            head = next(rd)
        except StopIteration:
            raise ValidationError(f"{path}:1: missing header {','.join(header)}") from None
        if [h.strip() for h in head] != header:
            raise ValidationError(f"{path}:1: header must be {','.join(header)}")
        for row in rd:
            line = rd.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            vals = []
            for name, kind, v in zip(header, kinds, row):
                try:
                    x = kind(v)
                    if isinstance(x, float) and not math.isfinite(x):
                        raise ValueError
                except ValueError:
                    raise ValidationError(f"{path}:{line}: field '{name}' has invalid value {v!r}") from None
                vals.append(x)
            out.append(vals)
    return out


def _pair_id(s: str):
    a, sep, b = s.partition("-")
    if not sep:
        raise ValueError(s)
    return int(a), int(b)


def write_dataset(data: Dataset, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cams = []
    for c in data.cameras:
        cams.append({"id": c.id, "fps": _num(c.fps), "frame_count": int(c.frame_count), "image_w": int(c.image_w),
                     "image_h": int(c.image_h),
                     "intrinsics": None if c.prior is None else intrinsics_to_dict(c.prior)})
    write_json(d / "cameras.json", {"cameras": cams})
    _write_csv(d / "matches.csv", MATCH_HEADER,
               ([int(a), int(b), *uv] for (a, b), uv in zip(data.match_cams, data.match_uv)))
    _write_csv(d / "tracklets.csv", TRACKLET_HEADER,
               ([int(c), int(o), int(f), *uv] for c, o, f, uv in zip(data.tr_cam, data.tr_obj, data.tr_frame,
                                                                     data.tr_uv)))
    _write_csv(d / "control_points.csv", CONTROL_HEADER,
               ([f"{int(a)}-{int(b)}", *uv] for (a, b), uv in zip(data.cp_pair, data.cp_uv)))


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    path = d / "cameras.json"
    if not path.exists():
        raise ValidationError(f"{path}: file not found")
    raw = read_json(path)
    if not isinstance(raw, dict) or not isinstance(raw.get("cameras"), list) or not raw["cameras"]:
        raise ValidationError(f"{path}: expected a non-empty 'cameras' list")
    cams = []
    for k, c in enumerate(raw["cameras"]):
        where = f"{path}: cameras[{k}]"
        w, h = _field(c, "image_w", where, int), _field(c, "image_h", where, int)
        prior = c.get("intrinsics")
        prior = None if prior is None else intrinsics_from_dict(prior, f"{where}.intrinsics", w, h)
        fps = _field(c, "fps", where)
        n = _field(c, "frame_count", where, int)
        if fps <= 0 or n < 0 or w <= 0 or h <= 0:
            raise ValidationError(f"{where}: fps, frame_count and image size must be positive")
        cams.append(CameraMeta(_field(c, "id", where, int), fps, n, w, h, prior))
    ids = [c.id for c in cams]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: camera ids are not unique")

    m = _read_csv(d / "matches.csv", MATCH_HEADER, [int, int, float, float, float, float])
    t = _read_csv(d / "tracklets.csv", TRACKLET_HEADER, [int, int, int, float, float])
    p = _read_csv(d / "control_points.csv", CONTROL_HEADER, [_pair_id, float, float, float, float])
    for name, header, rows, cols in (("matches.csv", MATCH_HEADER, m, (0, 1)),
                                     ("tracklets.csv", TRACKLET_HEADER, t, (0,))):
        for line, r in enumerate(rows, start=2):
            for col in cols:
                if r[col] not in ids:
                    raise ValidationError(f"{d / name}:{line}: field '{header[col]}' refers to unknown camera {r[col]}")
    for line, r in enumerate(p, start=2):
        if r[0][0] not in ids or r[0][1] not in ids:
            raise ValidationError(f"{d / 'control_points.csv'}:{line}: field 'pair_id' refers to an unknown camera")
    # duplicate (camera, object, frame) samples are ambiguous
    if t:
        key = np.array([r[:3] for r in t])
        if len(np.unique(key, axis=0)) != len(key):
            raise ValidationError(f"{d / 'tracklets.csv'}: duplicate (camera_id, object_id, frame) rows")
    return Dataset(
        cams,
        np.array([r[:2] for r in m], int).reshape(-1, 2), np.array([r[2:] for r in m], float).reshape(-1, 4),
        np.array([r[0] for r in t], int), np.array([r[1] for r in t], int), np.array([r[2] for r in t], int),
        np.array([r[3:] for r in t], float).reshape(-1, 2),
        np.array([r[0] for r in p], int).reshape(-1, 2), np.array([r[1:] for r in p], float).reshape(-1, 4))


# ---------------------------------------------------------------------------
# scene


def scene_to_dict(scene: Scene) -> dict:
    cams = []
    for c, tm in zip(scene.cameras, scene.time_maps):
        cams.append({"id": int(c.stream.id), "fps": _num(c.stream.fps), "frame_count": int(c.stream.frame_count),
                     "intrinsics": intrinsics_to_dict(c.intrinsics), "rotation": _pose_quat(c.pose),
                     "translation": [_num(v) for v in c.pose.t], "time_map": time_map_to_dict(tm)})
    objs = [{"id": int(o.object_id), "degree": int(o.curve.degree), "knots": [_num(v) for v in o.curve.knots],
             "control_points": [[_num(v) for v in p] for p in o.curve.control_points], "rms": _num(o.curve.rms)}
            for o in scene.objects]
    return {
        "mode": scene.mode,
        "reference": int(scene.reference),
        "scale_camera": None if scene.scale_camera is None else int(scene.scale_camera),
        "focal_init": None if scene.focal_init is None else [_num(v) for v in scene.focal_init],
        "cameras": cams,
        "points": [[_num(v) for v in p] for p in scene.points],
        "static_observations": [[int(c), int(p), _num(u), _num(v)]
                                for c, p, (u, v) in zip(scene.static_cam, scene.static_pt, scene.static_uv)],
        "objects": objs,
        "dynamic_observations": [[int(c), int(o), _num(f), _num(u), _num(v)] for c, o, f, (u, v) in
                                 zip(scene.dyn_cam, scene.dyn_obj, scene.dyn_frame, scene.dyn_uv)],
    }


def scene_from_dict(d: dict, where: str = "scene") -> Scene:
    if not isinstance(d, dict) or not isinstance(d.get("cameras"), list):
        raise ValidationError(f"{where}: expected an object with a 'cameras' list")
    cams, tms = [], []
    for k, c in enumerate(d["cameras"]):
        w = f"{where}: cameras[{k}]"
        if not isinstance(c.get("intrinsics"), dict) or not isinstance(c.get("time_map"), dict):
            raise ValidationError(f"{w}: missing 'intrinsics' or 'time_map'")
        intr = intrinsics_from_dict(c["intrinsics"], f"{w}.intrinsics")
        t = c.get("translation")
        if not isinstance(t, list) or len(t) != 3:
            raise ValidationError(f"{w}: field 'translation' must hold three numbers")
        pose = _pose_from(c.get("rotation"), t, f"{w}.rotation")
        stream = StreamMeta(_field(c, "id", w, int), _field(c, "fps", w), _field(c, "frame_count", w, int))
        cams.append(Camera(intr, pose, stream))
        tms.append(time_map_from_dict(c["time_map"], f"{w}.time_map"))
    objs = []
    for k, o in enumerate(d.get("objects", [])):
        w = f"{where}: objects[{k}]"
        try:
            curve = SplineCurve(_field(o, "degree", w, int), np.array(o["knots"], float),
                                np.array(o["control_points"], float), _field(o, "rms", w))
        except (KeyError, ValueError, TypeError) as e:
            raise ValidationError(f"{w}: invalid spline ({e})") from e
        objs.append(DynamicObject(_field(o, "id", w, int), curve))
    so = np.array(d.get("static_observations", []), float).reshape(-1, 4)
    do = np.array(d.get("dynamic_observations", []), float).reshape(-1, 5)
    scene = Scene(cams, tms, np.array(d.get("points", []), float).reshape(-1, 3),
                  so[:, 0].astype(int), so[:, 1].astype(int), so[:, 2:], objs,
                  do[:, 0].astype(int), do[:, 1].astype(int), do[:, 2], do[:, 3:],
                  reference=_field(d, "reference", where, int) if "reference" in d else 0,
                  scale_camera=d.get("scale_camera"), focal_init=d.get("focal_init"), mode=d.get("mode"))
    try:
        scene.validate()
    except ValueError as e:
        raise ValidationError(f"{where}: {e}") from e
    return scene


def write_scene(scene: Scene, path):
    write_json(path, scene_to_dict(scene))


def read_scene(path) -> Scene:
    return scene_from_dict(read_json(path), str(path))


# ---------------------------------------------------------------------------
# ground truth


def write_truth(truth, path):
    from .synthgen import GroundTruth  # noqa: F401  (type only)
    write_json(path, {"config": _jsonable(truth.config.to_dict()), "scene": scene_to_dict(truth.scene),
                      "match_inlier": [bool(v) for v in truth.match_inlier],
                      "object_ids": [[int(v) for v in ids] for ids in truth.object_ids]})


def read_truth(path):
    from .synthgen import GroundTruth, SynthConfig
    d = read_json(path)
    return GroundTruth(scene_from_dict(d["scene"], f"{path}: scene"), np.array(d["match_inlier"], bool),
                       [list(v) for v in d["object_ids"]], SynthConfig.from_dict(d["config"]))


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer, np.floating, float, int)) and not isinstance(v, bool):
        return _num(v)
    return v
