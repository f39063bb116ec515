"""Scene assembly: calibration, synchronization, two-view initialization and registration.

Three settings are supported: static-only (SO), static plus dynamic with the
time maps frozen at the sync solver's values (SD_un), and static plus dynamic
with the time maps refined in bundle adjustment (SD_sc). A dataset without
static matches runs the SD settings on trajectories alone.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .bundle import BAReport, LMConfig, ParameterPolicy, solve_ba
from .dataset import Dataset
from .errors import (DegenerateGeometryError, EstimationError, InitFailedError, InsufficientOverlapError,
                     OutOfDomainError, PoseDisambiguationError, UnderconstrainedFitError)
from .geometry import (Camera, Intrinsics, Pose, focal_from_fundamental, project, relative_pose_from_F,
                       triangulate_points, undistort_division)
from .robust import RansacConfig, estimate_F_and_distortion, ransac_F
from .scene import DynamicObject, ReconstructionMode, Scene
from .splines import SplineCurve, TimeMap, compose_time_maps, eval_spline, fit_spline, invert_time_map, map_time
from .sync import (PairSync, SyncConfig, SyncHypothesis, consolidate_time_maps, pairs_by_id,
                   sample_correspondences, solve_sync, tracklet_curves)

log = logging.getLogger(__name__)


@dataclass
class ReconstructConfig:
    ransac: RansacConfig = field(default_factory=RansacConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    knot_spacing_s: float = 1.0
    fix_alpha: bool = False
    d_grid: np.ndarray | None = None
    max_init_reproj_px: float = 8.0


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class CameraCalibration:
    camera_id: int
    intrinsics: Intrinsics
    source: str  # prior | two-view
    pair: tuple | None = None
    inliers: int = 0
    matches: int = 0
    low_coverage: bool = False


def calibrate_cameras(data: Dataset, cfg: ReconstructConfig | None = None) -> list[CameraCalibration]:
    """Per-camera intrinsics: user priors where given, otherwise the two-view estimator on the
    camera's best-connected pair, followed by closed-form focal recovery."""
    cfg = cfg or ReconstructConfig()
    out: dict[int, CameraCalibration] = {}
    for c in data.cameras:
        if c.prior is not None:
            out[c.id] = CameraCalibration(c.id, c.prior, "prior")
    todo = [c for c in data.cameras if c.id not in out]
    cache = {}
    for c in todo:
        best = None
        for o in data.cameras:
            if o.id == c.id:
                continue
            n = len(data.pair_matches(c.id, o.id)[0])
            key = (-n, min(c.id, o.id), max(c.id, o.id))
            if n and (best is None or key < best[0]):
                best = (key, o)
        if best is None:
            from .errors import CalibrationFailedError
            raise CalibrationFailedError(f"camera {c.id} shares no matches with another camera")
        o = best[1]
        i, j = sorted((c.id, o.id))
        if (i, j) not in cache:
            cache[(i, j)] = _calibrate_pair(data, i, j, cfg)
        out[c.id] = cache[(i, j)][c.id]
    return [out[c.id] for c in data.cameras]


def _calibrate_pair(data: Dataset, i: int, j: int, cfg: ReconstructConfig) -> dict:
    from .errors import CalibrationFailedError
    ci, cj = data.cameras[data.camera_index(i)], data.cameras[data.camera_index(j)]
    x1, x2 = data.pair_matches(i, j)
    i1 = ci.prior or ci.default_intrinsics()
    i2 = cj.prior or cj.default_intrinsics()
    rcfg = cfg.ransac.scaled(ci.image_w, ci.image_h)
    res = estimate_F_and_distortion(x1, x2, i1, i2, rcfg, cfg.d_grid)
    try:
        f1, f2 = focal_from_fundamental(res.F, i1.center, i2.center)
    except DegenerateGeometryError as e:
        raise CalibrationFailedError(f"focal lengths not recoverable from pair ({i}, {j}): {e}") from e
    try:
        a = Intrinsics.centered(f1, ci.image_w, ci.image_h, res.d0_1)
        b = Intrinsics.centered(f2, cj.image_w, cj.image_h, res.d0_2)
    except Exception as e:  # out-of-range distortion or focal
        raise CalibrationFailedError(f"implausible calibration for pair ({i}, {j}): {e}") from e
    n_in = res.ransac.inlier_count
    return {i: CameraCalibration(i, ci.prior or a, "prior" if ci.prior else "two-view", (i, j), n_in, len(x1),
                                 res.low_coverage),
            j: CameraCalibration(j, cj.prior or b, "prior" if cj.prior else "two-view", (i, j), n_in, len(x1),
                                 res.low_coverage)}


# ---------------------------------------------------------------------------
# synchronization


@dataclass
class SyncOutcome:
    time_maps: list  # per camera index, to the reference camera's clock
    reference: int
    pairs: list  # PairSync
    failures: dict  # (i, j) -> error name


def _camera_curves(data: Dataset, cam_index: int, intr: Intrinsics, knot_spacing_s: float):
    meta = data.cameras[cam_index]
    try:
        return tracklet_curves(data.tracklets(meta.id), intr, meta.fps, knot_spacing_s)
    except OutOfDomainError:
        return []


def synchronize(data: Dataset, intrinsics: list[Intrinsics], cfg: ReconstructConfig | None = None,
                reference: int = 0) -> SyncOutcome:
    """Solve every camera pair that shares trajectories, then consolidate to one reference clock."""
    cfg = cfg or ReconstructConfig()
    n = data.n_cameras
    curves = [_camera_curves(data, k, intrinsics[k], cfg.knot_spacing_s) for k in range(n)]
    results, failures = [], {}
    for i in range(n):
        for j in range(i + 1, n):
            pairs = pairs_by_id(curves[i], curves[j])
            if not pairs:
                failures[(i, j)] = "insufficient-overlap"
                continue
            scfg = _scaled_sync_cfg(cfg, data.cameras[i])
            try:
                h = solve_sync(pairs, data.cameras[i].fps, data.cameras[j].fps, scfg)
            except EstimationError as e:
                failures[(i, j)] = e.name
                continue
            results.append(PairSync(i, j, h))
    tms = consolidate_time_maps(n, results, reference)
    return SyncOutcome(tms, reference, results, failures)


def _scaled_sync_cfg(cfg: ReconstructConfig, meta) -> SyncConfig:
    s = cfg.sync
    return SyncConfig(**{**s.__dict__, "ransac": s.ransac.scaled(meta.image_w, meta.image_h)})


def nominal_time_maps(data: Dataset, reference: int = 0) -> list[TimeMap]:
    f0 = data.cameras[reference].fps
    return [TimeMap(f0 / c.fps, 0.0) for c in data.cameras]


# ---------------------------------------------------------------------------
# initialization


def select_init_pair(n: int, match_counts: dict, overlaps: dict, mode) -> tuple[int, int]:
    """Most verified matches for SO, largest trajectory overlap otherwise; ties go to the
    lexicographically smallest pair."""
    mode = ReconstructionMode.parse(mode)
    if n < 2:
        raise InitFailedError("at least two cameras are needed")
    table = match_counts if mode is ReconstructionMode.SO else overlaps
    cands = [(-float(v), tuple(sorted(k))) for k, v in table.items() if v and v > 0]
    if not cands:
        what = "matches" if mode is ReconstructionMode.SO else "trajectory overlap"
        raise InitFailedError(f"no camera pair has {what}")
    return min(cands)[1]


def _temporal_overlap(data: Dataset, tms: list[TimeMap], i: int, j: int) -> float:
    """Total time (seconds of the reference clock) during which both cameras track a common object."""
    total = 0.0
    ti, tj = data.tr_cam == data.cameras[i].id, data.tr_cam == data.cameras[j].id
    for obj in np.intersect1d(data.tr_obj[ti], data.tr_obj[tj]):
        a = map_time(tms[i], data.tr_frame[ti & (data.tr_obj == obj)])
        b = map_time(tms[j], data.tr_frame[tj & (data.tr_obj == obj)])
        lo, hi = max(a.min(), b.min()), min(a.max(), b.max())
        total += max(0.0, hi - lo)
    return total


def triangulate_dynamic(curve_pairs, cams: list[Camera], tms: list[TimeMap], knot_spacing: float,
                        min_spans: float = 2.0) -> list[SplineCurve]:
    """Triangulate samples of associated 2D curves on the reference frame grid and fit 3D splines.

    ``curve_pairs`` holds ``(curve_a, curve_b)`` on undistorted pixels in the
    clocks of ``cams[0]`` and ``cams[1]``. Samples are merged and split where
    they leave a gap longer than one knot span; pieces shorter than
    ``min_spans`` knot spans are dropped.
    """
    taus, Xs = [], []
    for ca, cb in curve_pairs:
        da = [map_time(tms[0], v) for v in ca.domain]
        db = [map_time(tms[1], v) for v in cb.domain]
        lo, hi = max(da[0], db[0]), min(da[1], db[1])
        if hi - lo < min_spans * knot_spacing:
            continue
        tau = np.arange(np.ceil(lo), np.floor(hi) + 1.0)
        if len(tau) < 2:
            continue
        pa = eval_spline(ca, (tau - tms[0].beta) / tms[0].alpha, extrapolate=True)
        pb = eval_spline(cb, (tau - tms[1].beta) / tms[1].alpha, extrapolate=True)
        X = triangulate_points(cams, np.stack([pa, pb]), undistort=False, check=False)
        front = np.ones(len(X), bool)
        for c in cams:
            front &= c.pose.transform(X)[:, 2] > 0
        taus.append(tau[front])
        Xs.append(X[front])
    if not taus:
        raise InsufficientOverlapError("no trajectory pair overlaps for two knot spans")
    tau = np.concatenate(taus)
    X = np.vstack(Xs)
    order = np.argsort(tau, kind="stable")
    tau, X = tau[order], X[order]
    tau, first = np.unique(tau, return_index=True)
    X = X[first]
    cuts = np.nonzero(np.diff(tau) > knot_spacing)[0] + 1
    out = []
    for idx in np.split(np.arange(len(tau)), cuts):
        if len(idx) < 4 or tau[idx[-1]] - tau[idx[0]] < min_spans * knot_spacing:
            continue
        try:
            out.append(fit_spline(tau[idx], X[idx], 3, knot_spacing, anchor=0.0))
        except UnderconstrainedFitError:
            continue
    return out


def _assign_dynamic(data: Dataset, cam_indices: list[int], tms: list[TimeMap], objects: list[DynamicObject]):
    """Observation arrays for every tracklet sample that falls inside one of its object's pieces."""
    rows = ([], [], [], [])
    for s_idx, k in enumerate(cam_indices):
        cid = data.cameras[k].id
        sel = data.tr_cam == cid
        fr, obj, uv = data.tr_frame[sel], data.tr_obj[sel], data.tr_uv[sel]
        tau = map_time(tms[s_idx], fr)
        assigned = -np.ones(len(fr), int)
        for p, o in enumerate(objects):
            m = (obj == o.object_id) & (assigned < 0) & o.curve.contains(tau)
            assigned[m] = p
        keep = assigned >= 0
        rows[0].append(np.full(keep.sum(), s_idx))
        rows[1].append(assigned[keep])
        rows[2].append(fr[keep].astype(float))
        rows[3].append(uv[keep])
    if not rows[0]:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros((0, 2))
    return (np.concatenate(rows[0]), np.concatenate(rows[1]), np.concatenate(rows[2]),
            np.vstack(rows[3]).reshape(-1, 2))


def _triangulate_static(data, cams, ids, max_px):
    """Triangulate the two-view matches of the init pair, keeping the geometrically consistent ones."""
    x1, x2 = data.pair_matches(ids[0], ids[1])
    if len(x1) == 0:
        return np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 2))
    try:
        X = triangulate_points(cams, np.stack([x1, x2]), undistort=True, check=False)
    except OutOfDomainError:
        ok = np.ones(len(x1), bool)
        for c, x in zip(cams, (x1, x2)):
            ok &= _undistortable(x, c.intrinsics)
        x1, x2 = x1[ok], x2[ok]
        X = triangulate_points(cams, np.stack([x1, x2]), undistort=True, check=False)
    good = np.isfinite(X).all(axis=1)
    for c in cams:
        good &= c.pose.transform(X)[:, 2] > 0
    err = np.full(len(X), np.inf)
    if good.any():
        err[good] = np.maximum(*(np.linalg.norm(project(X[good], c) - x[good], axis=1)
                                 for c, x in zip(cams, (x1, x2))))
    # an inaccurate calibration inflates every error alike, so the gate follows the median
    gate = max(max_px, 3.0 * np.median(err[good])) if good.any() else max_px
    good &= err < gate
    return X[good], x1[good], x2[good]


def _undistortable(x, intr):
    a = x - intr.center
    return 1 - 4 * intr.d0 * np.sum(a * a, axis=1) >= 0


@dataclass
class InitResult:
    scene: Scene
    cam_indices: list  # dataset camera index per scene camera
    hypothesis: SyncHypothesis | None = None


def initialize_two_view(data: Dataset, i: int, j: int, mode, intrinsics: list[Intrinsics],
                        time_maps: list[TimeMap] | None, cfg: ReconstructConfig | None = None,
                        sync_hypothesis: SyncHypothesis | None = None) -> InitResult:
    """Two-camera scene from dataset camera indices ``i`` (reference) and ``j``.

    ``time_maps`` are per dataset camera, relative to camera ``i``'s clock.
    """
    cfg = cfg or ReconstructConfig()
    mode = ReconstructionMode.parse(mode)
    mi, mj = data.cameras[i], data.cameras[j]
    intr_i, intr_j = intrinsics[i], intrinsics[j]
    rcfg = cfg.ransac.scaled(mi.image_w, mi.image_h)
    tms = [TimeMap(1.0, 0.0), time_maps[j]] if time_maps is not None else [
        TimeMap(1.0, 0.0), TimeMap(mi.fps / mj.fps, 0.0)]

    curves_i = curves_j = None
    if mode is ReconstructionMode.SO:
        x1, x2 = data.pair_matches(mi.id, mj.id)
        if len(x1) < 8:
            raise InitFailedError("static-only initialization needs at least 8 matches")
        try:
            u1, u2 = undistort_division(x1, intr_i), undistort_division(x2, intr_j)
        except OutOfDomainError:
            ok = _undistortable(x1, intr_i) & _undistortable(x2, intr_j)
            x1, x2 = x1[ok], x2[ok]
            u1, u2 = undistort_division(x1, intr_i), undistort_division(x2, intr_j)
        try:
            res = ransac_F(u1, u2, rcfg)
        except EstimationError as e:
            raise InitFailedError(f"no epipolar geometry among the static matches: {e}") from e
        F, s1, s2 = res.model, u1[res.inlier_mask], u2[res.inlier_mask]
    else:
        curves_i = _camera_curves(data, i, intr_i, cfg.knot_spacing_s)
        curves_j = _camera_curves(data, j, intr_j, cfg.knot_spacing_s)
        pairs = pairs_by_id(curves_i, curves_j)
        if not pairs:
            raise InitFailedError("no trajectory is tracked in both init cameras")
        h = sync_hypothesis
        if h is None:
            h = solve_sync(pairs, mi.fps, mj.fps, _scaled_sync_cfg(cfg, mi))
        if time_maps is None:
            tms[1] = h.time_map
        # trajectory samples under the time map actually used
        s1, s2, _ = sample_correspondences(pairs, tms[1], cfg.sync.refine_samples_per_pair)
        try:
            res = ransac_F(s1, s2, rcfg)
        except EstimationError as e:
            raise InitFailedError(f"trajectory samples admit no epipolar geometry: {e}") from e
        F, s1, s2 = res.model, s1[res.inlier_mask], s2[res.inlier_mask]
        sync_hypothesis = h

    try:
        _, pose_j = relative_pose_from_F(F, intr_i, intr_j, s1, s2, 2 * rcfg.threshold_px)
    except PoseDisambiguationError as e:
        raise InitFailedError(str(e)) from e
    cams = [Camera(intr_i, Pose.identity(), mi.stream), Camera(intr_j, pose_j, mj.stream)]

    X, o1, o2 = _triangulate_static(data, cams, (mi.id, mj.id), cfg.max_init_reproj_px)
    L = len(X)
    static = dict(points=X, static_cam=np.r_[np.zeros(L, int), np.ones(L, int)],
                  static_pt=np.r_[np.arange(L), np.arange(L)], static_uv=np.vstack([o1, o2]))

    objects = []
    if mode.uses_dynamic:
        spacing = cfg.knot_spacing_s * mi.fps
        # refit curves with the time map in hand: pair up segments of the same object
        for obj in sorted({p.id1 for p in pairs_by_id(curves_i, curves_j)}):
            cp = [(p.curve1, p.curve2) for p in pairs_by_id(curves_i, curves_j) if p.id1 == obj]
            try:
                pieces = triangulate_dynamic(cp, cams, tms, spacing)
            except InsufficientOverlapError:
                continue
            objects.extend(DynamicObject(obj, c) for c in pieces)
        if not objects and L == 0:
            raise InitFailedError("neither static points nor trajectories could be triangulated")
    elif L < 8:
        raise InitFailedError(f"only {L} static points triangulated")

    d_cam, d_obj, d_frame, d_uv = _assign_dynamic(data, [i, j], tms, objects)
    scene = Scene(cams, tms, dyn_cam=d_cam, dyn_obj=d_obj, dyn_frame=d_frame, dyn_uv=d_uv, objects=objects,
                  reference=0, scale_camera=1, focal_init=[intr_i.f, intr_j.f], mode=mode.value, **static)
    return InitResult(scene, [i, j], sync_hypothesis)


# ---------------------------------------------------------------------------
# registration of further cameras


def resect_camera(X, uv_raw, intr: Intrinsics, rcfg: RansacConfig, seed: int = 0) -> Pose:
    """Calibrated DLT inside RANSAC, then nonlinear refinement of the reprojection error."""
    X = np.asarray(X, float)
    m = (undistort_division(uv_raw, intr) - intr.center) / intr.f
    n = len(X)
    if n < 6:
        raise InitFailedError("resection needs at least six 2D-3D correspondences")
    Xh = np.hstack([X, np.ones((n, 1))])

    def dlt(idx):
        A = np.zeros((2 * len(idx), 12))
        A[0::2, 0:4] = Xh[idx]
        A[0::2, 8:12] = -m[idx, 0:1] * Xh[idx]
        A[1::2, 4:8] = Xh[idx]
        A[1::2, 8:12] = -m[idx, 1:2] * Xh[idx]
        P = np.linalg.svd(A)[2][-1].reshape(3, 4)
        U, s, Vt = np.linalg.svd(P[:, :3])
        sign = np.sign(np.linalg.det(U @ Vt))
        R = sign * U @ Vt
        t = sign * P[:, 3] / s.mean()
        if np.linalg.det(R) < 0:
            R, t = -R, -t
        if np.median((X @ R.T + t)[:, 2]) < 0:
            return None
        return R, t

    def errs(R, t):
        Xc = X @ R.T + t
        z = np.where(Xc[:, 2] > 1e-9, Xc[:, 2], 1e-9)
        return intr.f * np.linalg.norm(Xc[:, :2] / z[:, None] - m, axis=1)

    rng = np.random.default_rng(seed)
    best, best_n = None, -1
    for _ in range(200 if n > 6 else 1):
        idx = rng.choice(n, 6, replace=False) if n > 6 else np.arange(6)
        sol = dlt(idx)
        if sol is None:
            continue
        k = int(np.sum(errs(*sol) < 2 * rcfg.threshold_px))
        if k > best_n:
            best, best_n = sol, k
    if best is None or best_n < 6:
        raise InitFailedError("resection found no consistent pose")
    inl = errs(*best) < 2 * rcfg.threshold_px
    R0, t0 = best

    def resid(p):
        R = Rotation.from_rotvec(p[:3]).as_matrix() @ R0
        Xc = X[inl] @ R.T + p[3:]
        return (intr.f * (Xc[:, :2] / Xc[:, 2:3] - m[inl])).ravel()

    sol = least_squares(resid, np.r_[np.zeros(3), t0], method="lm")
    R = Rotation.from_rotvec(sol.x[:3]).as_matrix() @ R0
    return Pose(R, sol.x[3:])


def _register_more(data, init: InitResult, intrinsics, sync_maps, cfg, mode):
    """Resect every remaining camera on static points and trajectory samples, then extend the scene."""
    scene = init.scene
    cam_idx = list(init.cam_indices)
    for k in range(data.n_cameras):
        if k in cam_idx:
            continue
        meta = data.cameras[k]
        tm_k = sync_maps[k] if sync_maps is not None else TimeMap(data.cameras[cam_idx[0]].fps / meta.fps, 0.0)
        X3, uv = [], []
        # static: matches whose partner pixel already observes a point
        key = {}
        for r in range(len(scene.static_cam)):
            key[(scene.static_cam[r], *np.round(scene.static_uv[r], 9))] = scene.static_pt[r]
        for s_idx, o in enumerate(cam_idx):
            xa, xb = data.pair_matches(meta.id, data.cameras[o].id)
            for p_new, p_old in zip(xa, xb):
                pt = key.get((s_idx, *np.round(p_old, 9)))
                if pt is not None:
                    X3.append(scene.points[pt])
                    uv.append(p_new)
        # dynamic: tracklet samples inside reconstructed pieces
        sel = data.tr_cam == meta.id
        tau = map_time(tm_k, data.tr_frame[sel])
        for o in scene.objects:
            m = (data.tr_obj[sel] == o.object_id) & o.curve.contains(tau)
            if m.any():
                X3.extend(eval_spline(o.curve, tau[m]))
                uv.extend(data.tr_uv[sel][m])
        rcfg = cfg.ransac.scaled(meta.image_w, meta.image_h)
        pose = resect_camera(np.array(X3), np.array(uv), intrinsics[k], rcfg)
        cams = scene.cameras + [Camera(intrinsics[k], pose, meta.stream)]
        tms = scene.time_maps + [tm_k]
        new_s = len(cams) - 1
        # static observations for matched points
        s_cam, s_pt, s_uv = list(scene.static_cam), list(scene.static_pt), list(scene.static_uv)
        pts = list(scene.points)
        for s_idx, o in enumerate(cam_idx):
            xa, xb = data.pair_matches(meta.id, data.cameras[o].id)
            for p_new, p_old in zip(xa, xb):
                pt = key.get((s_idx, *np.round(p_old, 9)))
                if pt is not None:
                    s_cam.append(new_s)
                    s_pt.append(pt)
                    s_uv.append(p_new)
            X, a, b = _triangulate_static(data, [cams[s_idx], cams[new_s]], (data.cameras[o].id, meta.id),
                                          cfg.max_init_reproj_px)
            for Xp, pa, pb in zip(X, a, b):
                if (s_idx, *np.round(pa, 9)) in key:
                    continue
                pts.append(Xp)
                s_cam += [s_idx, new_s]
                s_pt += [len(pts) - 1] * 2
                s_uv += [pa, pb]
        cam_idx.append(k)
        d_cam, d_obj, d_frame, d_uv = _assign_dynamic(data, cam_idx, tms, scene.objects)
        scene = scene.copy(cameras=cams, time_maps=tms, points=np.array(pts).reshape(-1, 3), static_cam=s_cam,
                           static_pt=s_pt, static_uv=np.array(s_uv).reshape(-1, 2), dyn_cam=d_cam, dyn_obj=d_obj,
                           dyn_frame=d_frame, dyn_uv=d_uv,
                           focal_init=list(scene.focal_init or []) + [intrinsics[k].f])
        scene, _ = solve_ba(scene, policy=ParameterPolicy.for_mode(mode, cfg.fix_alpha), cfg=cfg.lm)
    return scene, cam_idx


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class ReconstructionResult:
    scene: Scene
    report: BAReport
    cam_indices: list
    init_pair: tuple
    sync: SyncOutcome | None = None
    calibration: list | None = None


def reconstruct_scene(data: Dataset, mode, cfg: ReconstructConfig | None = None,
                      intrinsics: list[Intrinsics] | None = None, time_maps: list[TimeMap] | None = None,
                      sync: SyncOutcome | None = None) -> ReconstructionResult:
    """Full pipeline for one setting. Missing calibration or time maps are estimated here.

    ``time_maps`` (per dataset camera, to camera 0's clock) override the sync solver.
    """
    cfg = cfg or ReconstructConfig()
    mode = ReconstructionMode.parse(mode)
    n = data.n_cameras
    has_tracks = len(data.tr_cam) > 0
    if mode is ReconstructionMode.SO and len(data.match_uv) == 0:
        raise InitFailedError("static-only reconstruction needs static matches")
    if mode.uses_dynamic and not has_tracks:
        raise InitFailedError("dynamic reconstruction needs tracklets")

    calib = None
    if intrinsics is None:
        if len(data.match_uv):
            calib = calibrate_cameras(data, cfg)
            intrinsics = [c.intrinsics for c in calib]
        else:
            intrinsics = [c.prior or c.default_intrinsics() for c in data.cameras]

    if time_maps is None and has_tracks and sync is None:
        try:
            sync = synchronize(data, intrinsics, cfg)
        except EstimationError:
            if mode.uses_dynamic:
                raise
            sync = None
    if time_maps is None:
        time_maps = sync.time_maps if sync is not None else nominal_time_maps(data)

    counts = {}
    overlaps = {}
    for a in range(n):
        for b in range(a + 1, n):
            counts[(a, b)] = len(data.pair_matches(data.cameras[a].id, data.cameras[b].id)[0])
            overlaps[(a, b)] = _temporal_overlap(data, time_maps, a, b) if has_tracks else 0.0
    i, j = select_init_pair(n, counts, overlaps, mode)

    # time maps relative to the init reference camera
    ref_inv = invert_time_map(time_maps[i])
    rel = [compose_time_maps(ref_inv, tm) for tm in time_maps]
    rel[i] = TimeMap(1.0, 0.0)
    hyp = None
    if sync is not None and mode.uses_dynamic:
        for p in sync.pairs:
            if (p.i, p.j) == (i, j):
                hyp = p.hypothesis

    init = initialize_two_view(data, i, j, mode, intrinsics, rel, cfg, hyp)
    policy = ParameterPolicy.for_mode(mode, cfg.fix_alpha)
    scene, report = solve_ba(init.scene, policy=policy, cfg=cfg.lm)
    cam_idx = [i, j]
    if n > 2:
        scene, cam_idx = _register_more(data, InitResult(scene, cam_idx), intrinsics, rel, cfg, mode)
        scene, report = solve_ba(scene, policy=policy, cfg=cfg.lm)
    if mode is ReconstructionMode.SO:
        scene = scene.copy(objects=[], dyn_cam=[], dyn_obj=[], dyn_frame=[], dyn_uv=[])
    scene.mode = mode.value
    return ReconstructionResult(scene, report, cam_idx, (i, j), sync, calib)


def posthoc_trajectories(scene: Scene, data: Dataset, cam_indices: list[int], cfg: ReconstructConfig | None = None
                         ) -> Scene:
    """Triangulate and fit object trajectories with every camera and clock frozen.

    Used to score trajectory error for static-only reconstructions, whose
    cameras never see the dynamic observations during optimization.
    """
    cfg = cfg or ReconstructConfig()
    if len(scene.cameras) < 2:
        return scene
    a, b = cam_indices[0], cam_indices[1]
    intr = [c.intrinsics for c in scene.cameras]
    ca = _camera_curves(data, a, intr[0], cfg.knot_spacing_s)
    cb = _camera_curves(data, b, intr[1], cfg.knot_spacing_s)
    spacing = cfg.knot_spacing_s * data.cameras[a].fps
    objects = []
    for obj in sorted({p.id1 for p in pairs_by_id(ca, cb)}):
        cp = [(p.curve1, p.curve2) for p in pairs_by_id(ca, cb) if p.id1 == obj]
        try:
            pieces = triangulate_dynamic(cp, scene.cameras[:2], scene.time_maps[:2], spacing)
        except (InsufficientOverlapError, OutOfDomainError):
            continue
        objects.extend(DynamicObject(obj, c) for c in pieces)
    if not objects:
        return scene
    d_cam, d_obj, d_frame, d_uv = _assign_dynamic(data, cam_indices, scene.time_maps, objects)
    full = scene.copy(objects=objects, dyn_cam=d_cam, dyn_obj=d_obj, dyn_frame=d_frame, dyn_uv=d_uv)
    only_splines = ParameterPolicy(focal=False, d0=False, poses=False, points=False, splines=True)
    try:
        full, _ = solve_ba(full, policy=only_splines, cfg=cfg.lm)
    except EstimationError:
        pass
    return full
