"""Synthetic ground-truth datasets.

Cameras sit on a horizontal arc around the origin and look along exactly
horizontal optical axes, with alternating heights so the axes are skew (the
closed-form focal recovery is degenerate for intersecting axes). World
coordinates use y pointing down like the cameras.

Time: the reference clock is camera 0's frame clock. Frame ``j`` of camera
``i`` happens at reference time ``alpha_i * j + beta_i`` with
``alpha_i = fps_0 / fps_i``. Object trajectories are cubic B-splines on the
reference clock whose knots sit on multiples of ``object_knot_spacing_s``
seconds, so the reconstruction's one-second knot grid represents them exactly.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import CameraMeta, Dataset
from .errors import ValidationError
from .geometry import Camera, Intrinsics, Pose, StreamMeta, distort_division
from .scene import DynamicObject, Scene
from .splines import SplineCurve, TimeMap, eval_spline, uniform_clamped_knots

MOTION_MODELS = ("spline-random-walk", "constant-velocity")
SCENARIOS = ("identity", "narrow-band", "low-overlap", "wide-baseline")


@dataclass
class SynthConfig:
    n_cameras: int = 2
    fps: list = field(default_factory=lambda: [15.0, 25.0])
    duration_s: float = 60.0
    n_static_points: int = 200
    n_objects: int = 5
    motion_model: str = "spline-random-walk"
    noise_px: float = 0.0
    outlier_fraction: float = 0.0
    d0: list = field(default_factory=lambda: [-4e-7, -2e-7])
    beta: list = field(default_factory=lambda: [0.0, 37.0])
    focal: list = field(default_factory=lambda: [1200.0, 1000.0])
    image_w: int = 1920
    image_h: int = 1080
    arc_deg: float = 30.0
    baseline: float = 1.0
    height_offset: float = 0.15
    static_box: list = field(default_factory=lambda: [1.6, 0.9, 1.0])
    object_box: list = field(default_factory=lambda: [0.7, 0.35, 0.5])
    object_knot_spacing_s: float = 2.0
    object_step: float = 0.3
    n_control_points: int = 20
    shuffle_object_ids: bool = False
    emit_prior_intrinsics: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        n = self.n_cameras
        if n < 2:
            raise ValidationError("n_cameras must be at least 2")
        for name in ("fps", "d0", "beta", "focal"):
            v = getattr(self, name)
            if len(v) != n:
                raise ValidationError(f"{name} needs {n} entries, got {len(v)}")
        if self.beta[0] != 0:
            raise ValidationError("beta[0] must be 0: camera 0 defines the reference clock")
        if min(self.n_static_points, self.n_objects, self.n_control_points) < 0:
            raise ValidationError("counts must be non-negative")
        if self.noise_px < 0 or not 0 <= self.outlier_fraction < 1:
            raise ValidationError("noise must be >= 0 and outlier fraction in [0, 1)")
        if min(self.fps) <= 0 or self.duration_s <= 0:
            raise ValidationError("fps and duration must be positive")
        if self.motion_model not in MOTION_MODELS:
            raise ValidationError(f"unknown motion model {self.motion_model!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config field(s): {', '.join(sorted(extra))}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class GroundTruth:
    scene: Scene
    match_inlier: np.ndarray
    object_ids: list  # per camera: true object index -> dataset object id
    config: SynthConfig

    @property
    def time_maps(self) -> list[TimeMap]:
        return self.scene.time_maps


def arc_cameras(cfg: SynthConfig, arc_deg: float | None = None) -> list[Camera]:
    arc = np.deg2rad(cfg.arc_deg if arc_deg is None else arc_deg)
    radius = cfg.baseline / (2 * np.sin(arc / 2))
    cams = []
    for i in range(cfg.n_cameras):
        th = (i - (cfg.n_cameras - 1) / 2) * arc
        C = np.array([radius * np.sin(th), cfg.height_offset * (-1) ** (i + 1), -radius * np.cos(th)])
        z = np.array([-np.sin(th), 0.0, np.cos(th)])
        x = np.array([np.cos(th), 0.0, np.sin(th)])
        R = np.vstack([x, np.cross(z, x), z])
        intr = Intrinsics.centered(cfg.focal[i], cfg.image_w, cfg.image_h, cfg.d0[i])
        n_frames = int(round(cfg.duration_s * cfg.fps[i]))
        cams.append(Camera(intr, Pose.from_center(R, C), StreamMeta(i, float(cfg.fps[i]), n_frames)))
    return cams


def project_visible(X, cam: Camera, margin: float = 1.0):
    """Project points, returning ``(uv, visible)``; invisible rows hold NaN."""
    X = np.atleast_2d(np.asarray(X, float))
    Xc = cam.pose.transform(X)
    intr = cam.intrinsics
    ok = Xc[:, 2] > 0.1
    uv = np.full((len(X), 2), np.nan)
    p = intr.f * Xc[ok, :2] / Xc[ok, 2:3] + intr.center
    # near the pole of the division model the image point runs off to infinity anyway
    r2 = np.sum((p - intr.center) ** 2, axis=1)
    tame = ~((intr.d0 < 0) & (r2 * abs(intr.d0) >= 0.9))
    q = np.full_like(p, np.nan)
    q[tame] = distort_division(p[tame], intr)
    uv[ok] = q
    inside = ((uv[:, 0] >= margin) & (uv[:, 0] <= intr.image_w - margin)
              & (uv[:, 1] >= margin) & (uv[:, 1] <= intr.image_h - margin))
    return uv, inside & ok


def _time_maps(cfg: SynthConfig) -> list[TimeMap]:
    return [TimeMap(cfg.fps[0] / cfg.fps[i], float(cfg.beta[i])) for i in range(cfg.n_cameras)]


def _random_walk(rng, n, box, step):
    box = np.asarray(box, float)
    P = np.empty((n, 3))
    P[0] = rng.uniform(-box, box)
    for k in range(1, n):
        q = P[k - 1] + rng.normal(0.0, step, 3)
        # reflect back into the box
        q = np.where(q > box, 2 * box - q, q)
        q = np.where(q < -box, -2 * box - q, q)
        P[k] = np.clip(q, -box, box)
    return P


def _object_curves(cfg, rng, t0, t1) -> list[SplineCurve]:
    spacing = cfg.object_knot_spacing_s * cfg.fps[0]
    length = t1 - t0
    curves = []
    for _ in range(cfg.n_objects):
        dur = length * rng.uniform(0.4, 0.8)
        a = t0 + rng.uniform(0.0, length - dur)
        knots = uniform_clamped_knots(a, a + dur, spacing, 3)
        n = len(knots) - 4
        if cfg.motion_model == "constant-velocity":
            p0, p1 = rng.uniform(-1, 1, (2, 3)) * cfg.object_box
            # Greville abscissae reproduce a linear function exactly
            g = np.array([knots[i + 1:i + 4].mean() for i in range(n)])
            s = (g - a) / dur
            cps = p0 + s[:, None] * (p1 - p0)
        else:
            cps = _random_walk(rng, n, cfg.object_box, cfg.object_step)
        curves.append(SplineCurve(3, knots, cps))
    return curves


def _spread_subset(uv, k):
    """Greedy farthest-point selection, seeded at the sample nearest the centroid."""
    if len(uv) <= k:
        return np.arange(len(uv))
    chosen = [int(np.argmin(np.sum((uv - uv.mean(0)) ** 2, axis=1)))]
    d = np.sum((uv - uv[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.sum((uv - uv[nxt]) ** 2, axis=1))
    return np.array(sorted(chosen))


def _sample_visible(rng, cams, n, box, need_pairs, max_tries=200, accept=None):
    """Rejection-sample ``n`` box points visible in at least one camera pair of ``need_pairs``.

    ``accept(uv_per_camera)`` may veto points further.
    """
    box = np.asarray(box, float)
    got = []
    for _ in range(max_tries):
        X = rng.uniform(-box, box, (max(4 * n, 64), 3))
        proj = [project_visible(X, c) for c in cams]
        keep = np.zeros(len(X), bool)
        for i, j in need_pairs:
            keep |= proj[i][1] & proj[j][1]
        if accept is not None:
            keep &= accept([uv for uv, _ in proj])
        got.extend(X[keep])
        if len(got) >= n:
            return np.array(got[:n]).reshape(-1, 3)
    if n and not got:
        raise ValidationError("camera frustums do not intersect inside the scene box")
    return np.array(got).reshape(-1, 3)


def _static_block(rng, cfg, cams, pairs, X, outlier_lo=None, outlier_hi=None):
    """Noisy matches of the points ``X`` plus labeled uniform outliers, and the true observations."""
    N, sigma = len(cams), cfg.noise_px
    proj = [project_visible(X, c) for c in cams]
    obs = [uv + rng.normal(0.0, sigma, uv.shape) if sigma > 0 else uv for uv, _ in proj]
    rows_c, rows_uv, rows_pt = [], [], []
    for i, j in pairs:
        both = np.nonzero(proj[i][1] & proj[j][1])[0]
        for k in both:
            rows_c.append((i, j))
            rows_uv.append(np.concatenate([obs[i][k], obs[j][k]]))
            rows_pt.append(k)
    n_in = len(rows_c)
    n_out = int(round(cfg.outlier_fraction / (1 - cfg.outlier_fraction) * n_in))
    lo = [0, 0, 0, 0] if outlier_lo is None else outlier_lo
    hi = [cfg.image_w, cfg.image_h] * 2 if outlier_hi is None else outlier_hi
    for _ in range(n_out):
        i, j = pairs[rng.integers(len(pairs))]
        rows_c.append((i, j))
        rows_uv.append(rng.uniform(lo, hi))
        rows_pt.append(-1)
    order = rng.permutation(len(rows_c))
    match_cams = np.array(rows_c, int).reshape(-1, 2)[order]
    match_uv = np.array(rows_uv, float).reshape(-1, 4)[order]
    match_pt = np.array(rows_pt, int)[order]
    inlier = match_pt >= 0

    # one true observation per camera per matched point
    s_cam, s_pt, s_uv = [], [], []
    for i in range(N):
        seen = np.zeros(len(X), bool)
        for (a, b), k in zip(match_cams[inlier], match_pt[inlier]):
            if i in (a, b):
                seen[k] = True
        idx = np.nonzero(seen)[0]
        s_cam.extend([i] * len(idx))
        s_pt.extend(idx)
        s_uv.extend(obs[i][idx])
    return match_cams, match_uv, inlier, (np.array(s_cam, int), np.array(s_pt, int),
                                          np.array(s_uv, float).reshape(-1, 2))


def generate(cfg: SynthConfig | None = None, cameras: list[Camera] | None = None) -> tuple[Dataset, GroundTruth]:
    """Build a dataset and its ground truth. Deterministic for a given config."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.rng_seed)  # geometry
    nrng = np.random.default_rng([cfg.rng_seed, 2])  # noise and outliers, so truth is noise-independent
    cams = cameras or arc_cameras(cfg)
    tms = _time_maps(cfg)
    N = cfg.n_cameras
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]
    sigma = cfg.noise_px
    W, H = cfg.image_w, cfg.image_h

    X = _sample_visible(rng, cams, cfg.n_static_points, cfg.static_box, pairs)
    match_cams, match_uv, inlier, (s_cam, s_pt, s_uv) = _static_block(nrng, cfg, cams, pairs, X)

    # moving objects
    starts = [tm.beta for tm in tms]
    ends = [tm(c.stream.frame_count - 1) for tm, c in zip(tms, cams)]
    t0, t1 = max(starts), min(ends)
    if cfg.n_objects and t1 - t0 < 4 * cfg.object_knot_spacing_s * cfg.fps[0]:
        raise ValidationError("camera streams share too little time for moving objects")
    curves = _object_curves(cfg, rng, t0, t1)
    ids = []
    for i in range(N):
        perm = rng.permutation(cfg.n_objects) if cfg.shuffle_object_ids else np.arange(cfg.n_objects)
        ids.append([int(v) for v in perm])  # true object q appears as id perm[q] in camera i
    t_cam, t_obj, t_frame, t_uv = [], [], [], []
    d_cam, d_obj, d_frame, d_uv = [], [], [], []
    for i, (cam, tm) in enumerate(zip(cams, tms)):
        frames = np.arange(cam.stream.frame_count)
        tau = tm(frames)
        for q, curve in enumerate(curves):
            live = curve.contains(tau)
            fr = frames[live]
            if len(fr) == 0:
                continue
            uv, vis = project_visible(eval_spline(curve, tau[live]), cam)
            fr, uv = fr[vis], uv[vis]
            if sigma > 0:
                uv = uv + nrng.normal(0.0, sigma, uv.shape)
            t_cam.extend([i] * len(fr))
            t_obj.extend([ids[i][q]] * len(fr))
            t_frame.extend(fr)
            t_uv.extend(uv)
            d_cam.extend([i] * len(fr))
            d_obj.extend([q] * len(fr))
            d_frame.extend(fr)
            d_uv.extend(uv)
    t_cam, t_obj, t_frame = np.array(t_cam, int), np.array(t_obj, int), np.array(t_frame, int)
    t_uv = np.array(t_uv, float).reshape(-1, 2)
    order = np.lexsort((t_frame, t_obj, t_cam))

    # control points, spread over the first camera of each pair
    cp_pair, cp_uv = [], []
    for i, j in pairs:
        Xc = _sample_visible(rng, cams, 40 * max(cfg.n_control_points, 1), cfg.static_box, [(i, j)])
        ui = project_visible(Xc, cams[i])[0]
        uj = project_visible(Xc, cams[j])[0]
        sel = _spread_subset(ui, cfg.n_control_points) if cfg.n_control_points else np.arange(0)
        ui, uj = ui[sel], uj[sel]
        if sigma > 0:
            ui = ui + nrng.normal(0.0, sigma, ui.shape)
            uj = uj + nrng.normal(0.0, sigma, uj.shape)
        cp_pair.extend([(i, j)] * len(sel))
        cp_uv.extend(np.hstack([ui, uj]))

    metas = []
    for c in cams:
        prior = c.intrinsics if cfg.emit_prior_intrinsics else None
        metas.append(CameraMeta(c.stream.id, c.stream.fps, c.stream.frame_count, W, H, prior))
    data = Dataset(metas, match_cams, match_uv, t_cam[order], t_obj[order], t_frame[order], t_uv[order],
                   np.array(cp_pair, int).reshape(-1, 2), np.array(cp_uv, float).reshape(-1, 4))
    scene = Scene(cams, tms, X, s_cam, s_pt, s_uv,
                  [DynamicObject(q, c) for q, c in enumerate(curves)],
                  d_cam, d_obj, d_frame, d_uv, reference=0, scale_camera=1)
    truth = GroundTruth(scene, inlier, ids, cfg)
    return data, truth


def degrade(data: Dataset, truth: GroundTruth, scenario: str) -> tuple[Dataset, GroundTruth]:
    """Apply one of the failure-analysis scenarios.

    ``narrow-band`` replaces the static matches by ones whose rows fall inside
    a horizontal band (under 10% of the image height) in each view, above the
    moving objects; ``low-overlap`` keeps
    only points on the outer flanks of the shared view; ``wide-baseline``
    regenerates the scene with cameras 90 degrees apart.
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}")
    if scenario == "identity":
        return data, truth
    cfg = truth.config
    if scenario == "wide-baseline":
        return generate(replace(cfg, arc_deg=90.0))
    if scenario == "narrow-band":
        return _narrow_band(data, truth)
    # low-overlap: drop matches near the middle of the first view
    u1 = data.match_uv[:, 0]
    keep = (u1 < 0.3 * cfg.image_w) | (u1 > 0.7 * cfg.image_w)
    out = data.copy(match_cams=data.match_cams[keep], match_uv=data.match_uv[keep])
    return out, GroundTruth(truth.scene, truth.match_inlier[keep], truth.object_ids, cfg)


def _narrow_band(data: Dataset, truth: GroundTruth, rel_height: float = 0.09, anchor_y: float | None = None):
    """Replace the static structure by points whose images lie in one thin row band per view.

    The cameras stand at different heights, so a band shared by all views
    would be empty; each view gets its band centered where the point
    ``(0, anchor_y, 0)`` appears. The default puts the band near the top of
    the static volume, like a strip of background structure above the
    region where objects move.
    """
    cfg = truth.config
    if anchor_y is None:
        anchor_y = -0.9 * cfg.static_box[1]  # world y points down
    cams = truth.scene.cameras
    rng = np.random.default_rng([cfg.rng_seed, 1])
    nrng = np.random.default_rng([cfg.rng_seed, 3])
    half = rel_height * cfg.image_h / 2
    centers = []
    for c in cams:
        uv, vis = project_visible(np.array([[0.0, anchor_y, 0.0]]), c)
        centers.append(uv[0, 1] if vis[0] else cfg.image_h / 2)

    def accept(uvs):
        ok = np.ones(len(uvs[0]), bool)
        for uv, vc in zip(uvs, centers):
            with np.errstate(invalid="ignore"):
                ok &= np.abs(uv[:, 1] - vc) < half - 3 * cfg.noise_px - 1e-6
        return ok

    pairs = [(i, j) for i in range(len(cams)) for j in range(i + 1, len(cams))]
    X = _sample_visible(rng, cams, cfg.n_static_points, cfg.static_box, pairs, max_tries=2000,
                        accept=accept)
    lo = [0, centers[0] - half + 1e-6, 0, centers[1] - half + 1e-6]
    hi = [cfg.image_w, centers[0] + half - 1e-6, cfg.image_w, centers[1] + half - 1e-6]
    mc, muv, inl, (s_cam, s_pt, s_uv) = _static_block(nrng, cfg, cams, pairs, X, lo, hi)
    scene = truth.scene.copy(points=X, static_cam=s_cam, static_pt=s_pt, static_uv=s_uv)
    return data.copy(match_cams=mc, match_uv=muv), GroundTruth(scene, inl, truth.object_ids, cfg)
