"""Reprojection metrics on control points and object trajectories, plus report tables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import GeometryError
from .geometry import project, triangulate_points
from .scene import ReconstructionMode, Scene
from .splines import eval_spline, map_time

SUCCESS_PX = 7.0
MODES = (ReconstructionMode.SO, ReconstructionMode.SD_SC, ReconstructionMode.SD_UN)


def _scene_index(scene: Scene) -> dict:
    return {c.stream.id: k for k, c in enumerate(scene.cameras)}


def eval_cp(scene: Scene, data: Dataset) -> tuple[dict, int]:
    """Mean control-point reprojection error per camera id, and the number of skipped pairs.

    Each control pair is triangulated with the two reconstructed cameras and
    reprojected into both; pairs that cannot be triangulated are skipped.
    """
    idx = _scene_index(scene)
    errs = {cid: [] for cid in idx}
    skipped = 0
    for (a, b), uv in zip(data.cp_pair, data.cp_uv):
        if a not in idx or b not in idx:
            skipped += 1
            continue
        cams = [scene.cameras[idx[a]], scene.cameras[idx[b]]]
        obs = [uv[:2], uv[2:]]
        try:
            X = triangulate_points(cams, np.array(obs)[:, None, :], undistort=True, check=True)
            proj = [project(X, c)[0] for c in cams]
        except GeometryError:
            skipped += 1
            continue
        for cid, p, o in zip((a, b), proj, obs):
            errs[cid].append(float(np.linalg.norm(p - o)))
    return {cid: (float(np.mean(v)) if v else None) for cid, v in errs.items()}, skipped


def trajectory_residuals(scene: Scene, data: Dataset):
    """Per-observation trajectory reprojection errors over the index set.

    Returns ``(camera_id, object_id, frame, error_px)`` arrays. An observation
    belongs to the index set when its mapped time lies in a reconstructed piece
    of the same object; observations whose point falls behind the camera are
    not scored.
    """
    rows = [[], [], [], []]
    for k, (cam, tm) in enumerate(zip(scene.cameras, scene.time_maps)):
        cid = cam.stream.id
        sel = data.tr_cam == cid
        fr, obj, uv = data.tr_frame[sel], data.tr_obj[sel], data.tr_uv[sel]
        tau = map_time(tm, fr)
        done = np.zeros(len(fr), bool)
        for o in scene.objects:
            m = (obj == o.object_id) & ~done & o.curve.contains(tau)
            if not m.any():
                continue
            done |= m
            Xc = cam.pose.transform(eval_spline(o.curve, tau[m]))
            front = Xc[:, 2] > 1e-9
            if not front.any():
                continue
            p = project(eval_spline(o.curve, tau[m][front]), cam)
            rows[0].append(np.full(front.sum(), cid))
            rows[1].append(obj[m][front])
            rows[2].append(fr[m][front])
            rows[3].append(np.linalg.norm(p - uv[m][front], axis=1))
    if not rows[0]:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    return tuple(np.concatenate(r) for r in rows)


def eval_traj(scene: Scene, data: Dataset) -> dict:
    """Mean trajectory reprojection error per camera id (``None`` when the index set is empty)."""
    cam, _, _, err = trajectory_residuals(scene, data)
    out = {}
    for c in scene.cameras:
        m = cam == c.stream.id
        out[c.stream.id] = float(err[m].mean()) if m.any() else None
    return out


@dataclass
class EvalReport:
    mode: str | None
    e_cp: dict  # camera id -> mean px or None
    e_traj: dict
    cp_skipped: int = 0
    traj_source: str = "scene"  # scene | refit (trajectories fitted after the fact, cameras frozen)
    success: bool = field(init=False)

    def __post_init__(self):
        self.success = success_flag(list(self.e_cp.values()) + list(self.e_traj.values()))

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else float(v)
        return {"mode": self.mode, "success": self.success, "threshold_px": SUCCESS_PX,
                "e_cp": {str(k): num(v) for k, v in sorted(self.e_cp.items())},
                "e_traj": {str(k): num(v) for k, v in sorted(self.e_traj.items())},
                "cp_skipped": int(self.cp_skipped), "traj_source": self.traj_source}


def success_flag(errors) -> bool:
    """True exactly when at least one error is reported and every reported mean is below 7 px."""
    vals = [e for e in errors if e is not None]
    return bool(vals) and all(np.isfinite(e) and e < SUCCESS_PX for e in vals)


def evaluate_scene(scene: Scene, data: Dataset, refit_trajectories: bool = True) -> EvalReport:
    """Both metrics for one scene. A scene without objects (static-only) gets trajectories
    fitted with its cameras and clocks frozen when ``refit_trajectories`` is set."""
    e_cp, skipped = eval_cp(scene, data)
    source = "scene"
    if not scene.objects and refit_trajectories and len(data.tr_cam) and scene.n_cameras >= 2:
        from .reconstruct import posthoc_trajectories
        cam_idx = [data.camera_index(c.stream.id) for c in scene.cameras]
        scene = posthoc_trajectories(scene, data, cam_idx)
        source = "refit"
    e_traj = eval_traj(scene, data) if scene.objects else {c.stream.id: None for c in scene.cameras}
    return EvalReport(scene.mode, e_cp, e_traj, skipped, source)


# ---------------------------------------------------------------------------
# tables


def table4(rows: dict, camera_ids=None) -> dict:
    """Trajectory/control-point table: one row per dataset, columns e^k_cp and e^k_traj per mode.

    ``rows`` maps a dataset name to ``{mode: EvalReport}``; missing modes give
    empty cells. ``camera_ids`` fixes the camera order (default: the first two ids seen).
    """
    if camera_ids is None:
        seen = []
        for reports in rows.values():
            for r in reports.values():
                for cid in sorted(r.e_cp):
                    if cid not in seen:
                        seen.append(cid)
        camera_ids = seen[:2]
    columns = []
    for mode in MODES:
        for k, cid in enumerate(camera_ids, start=1):
            columns.append({"mode": mode.value, "metric": f"e{k}_cp", "camera": int(cid)})
            columns.append({"mode": mode.value, "metric": f"e{k}_traj", "camera": int(cid)})
    out_rows = []
    for name in rows:
        reports = {ReconstructionMode.parse(m).value: r for m, r in rows[name].items()}
        cells, success = [], {}
        for col in columns:
            r = reports.get(col["mode"])
            v = None
            if r is not None:
                v = (r.e_cp if col["metric"].endswith("_cp") else r.e_traj).get(col["camera"])
            cells.append(None if v is None else float(v))
        for mode in MODES:
            r = reports.get(mode.value)
            success[mode.value] = None if r is None else r.success
        out_rows.append({"dataset": name, "values": cells, "success": success})
    return {"columns": columns, "rows": out_rows}


def table3(scenes: dict) -> dict:
    """Focal lengths before and after bundle adjustment, per camera, for each given mode."""
    rows = []
    for mode in MODES:
        s = scenes.get(mode.value) or scenes.get(mode)
        if s is None:
            continue
        for k, c in enumerate(s.cameras):
            init = s.focal_init[k] if s.focal_init is not None and k < len(s.focal_init) else None
            rows.append({"mode": mode.value, "camera": int(c.stream.id),
                         "f_init": None if init is None else float(init), "f_opt": float(c.intrinsics.f)})
    return {"columns": ["mode", "camera", "f_init", "f_opt"], "rows": rows}


def format_table4(t: dict) -> str:
    """Plain-text rendering with one line per dataset."""
    head = ["dataset"] + [f"{c['mode']}:{c['metric']}" for c in t["columns"]]
    lines = ["\t".join(head)]
    for r in t["rows"]:
        lines.append("\t".join([r["dataset"]] + ["-" if v is None else f"{v:.3f}" for v in r["values"]]))
    return "\n".join(lines)
