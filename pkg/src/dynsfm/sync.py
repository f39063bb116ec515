"""Temporal alignment of two cameras from moving-object trajectories.

Each camera's tracklets are fitted with 2D splines on undistorted pixels in
that camera's own frame clock. For an offset hypothesis ``beta`` the curves
are sampled at common instants, giving point matches whose epipolar
consistency (RANSAC over the fundamental matrix) scores the hypothesis. The
rate ``alpha`` stays at the nominal frame-rate ratio; bundle adjustment may
refine it later.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateSampleError, EstimationError, InsufficientOverlapError,
                     SyncFailedError, UnderconstrainedFitError)
from .geometry import Intrinsics, undistort_division
from .robust import RansacConfig, eight_point_F, ransac_F, sampson_distance
from .splines import (SplineCurve, TimeMap, Tracklet, compose_time_maps, eval_spline,
                      fit_tracklet_spline, invert_time_map, split_tracklet)


@dataclass
class SyncConfig:
    beta_step: float = 5.0  # frames of the first camera
    min_overlap_s: float = 2.0
    samples_per_pair: int = 60
    refine_samples_per_pair: int = 200
    refine_tol: float = 0.1
    coarse_factor: float = 5.0  # grid offsets are up to step/2 off, so score them leniently
    knot_spacing_s: float = 1.0
    beta_range: tuple | None = None  # restrict candidates to [lo, hi]
    ransac: RansacConfig = field(default_factory=lambda: RansacConfig(max_iterations=300))


@dataclass(frozen=True, eq=False)
class TrajectoryPair:
    curve1: SplineCurve  # camera 1 clock
    curve2: SplineCurve  # camera 2 clock
    id1: int = 0
    id2: int = 0


@dataclass(frozen=True, eq=False)
class SyncHypothesis:
    time_map: TimeMap  # camera 2 clock -> camera 1 clock
    F: np.ndarray
    inlier_samples: int
    n_samples: int
    score: float
    pair_inlier_fraction: tuple = ()
    degenerate: bool = False
    candidates_tried: int = 0


def candidate_offsets(span1, span2, step: float, alpha: float = 1.0, min_overlap: float = 0.0) -> list[float]:
    """Offsets ``k * step`` for which the mapped second span overlaps the first by ``min_overlap``."""
    if not step > 0:
        raise ValueError("step must be positive")
    a1, b1 = span1
    a2, b2 = span2
    lo = a1 - alpha * b2 + min_overlap
    hi = b1 - alpha * a2 - min_overlap
    if hi < lo:
        return []
    k0, k1 = math.ceil(lo / step - 1e-9), math.floor(hi / step + 1e-9)
    return [float(k * step) for k in range(k0, k1 + 1)]


def _overlap(p: TrajectoryPair, tm: TimeMap):
    lo1, hi1 = p.curve1.domain
    lo2, hi2 = (tm.alpha * v + tm.beta for v in p.curve2.domain)
    return max(lo1, lo2), min(hi1, hi2)


def sample_correspondences(pairs, tm: TimeMap, n: int, min_overlap: float = 0.0):
    """Sample ``n`` instants per pair over its overlap; returns ``(x1, x2, pair_index)``.

    Times are in the first camera's clock, the second curve is evaluated at the
    inverse-mapped time.
    """
    x1, x2, owner = [], [], []
    for k, p in enumerate(pairs):
        lo, hi = _overlap(p, tm)
        if n <= 0 or hi - lo < max(min_overlap, 0.0) or hi <= lo:
            continue
        t1 = np.linspace(lo, hi, n)
        t2 = np.clip((t1 - tm.beta) / tm.alpha, *p.curve2.domain)
        x1.append(eval_spline(p.curve1, t1, extrapolate=True))
        x2.append(eval_spline(p.curve2, t2, extrapolate=True))
        owner.append(np.full(n, k))
    if not x1 or sum(len(o) for o in owner) < 8:
        raise InsufficientOverlapError("fewer than 8 trajectory samples overlap in time")
    return np.vstack(x1), np.vstack(x2), np.concatenate(owner)


def _union_span(curves):
    return min(c.domain[0] for c in curves), max(c.domain[1] for c in curves)


def _collinear(x, tol=1e-2):
    c = x - x.mean(0)
    s = np.linalg.svd(c, compute_uv=False)
    return s[1] <= tol * s[0]


def _evaluate(pairs, tm, n, rcfg):
    x1, x2, owner = sample_correspondences(pairs, tm, n)
    return ransac_F(x1, x2, rcfg), owner


def _refine_score(pairs, tm, n, thr2, use):
    """Truncated mean Sampson error of an F re-fitted on the samples of the ``use`` pairs."""
    try:
        x1, x2, owner = sample_correspondences([pairs[k] for k in use], tm, n)
    except InsufficientOverlapError:
        return math.inf, None
    keep = np.ones(len(x1), bool)
    F = None
    for _ in range(3):
        try:
            F = eight_point_F(x1[keep], x2[keep])
        except DegenerateSampleError:
            return math.inf, None
        d = sampson_distance(F, x1, x2)
        new = d < thr2
        if new.sum() < 8 or np.array_equal(new, keep):
            break
        keep = new
    return float(np.mean(np.minimum(d, thr2))), F


def solve_sync(pairs, fps1: float, fps2: float, cfg: SyncConfig | None = None) -> SyncHypothesis:
    """Estimate the map from camera 2 frames to camera 1 frames plus the fundamental matrix."""
    cfg = cfg or SyncConfig()
    pairs = list(pairs)
    if not pairs:
        raise SyncFailedError("no trajectory pairs to synchronize")
    alpha = fps1 / fps2
    coarse = replace(cfg.ransac, threshold_px=cfg.ransac.threshold_px * cfg.coarse_factor)
    thr2 = coarse.threshold_px ** 2
    span1 = _union_span([p.curve1 for p in pairs])
    span2 = _union_span([p.curve2 for p in pairs])
    min_ov = cfg.min_overlap_s * fps1
    betas = candidate_offsets(span1, span2, cfg.beta_step, alpha, min_ov)
    if cfg.beta_range is not None:
        betas = [b for b in betas if cfg.beta_range[0] <= b <= cfg.beta_range[1]]
    best_key, best = None, None
    for idx, beta in enumerate(betas):
        tm = TimeMap(alpha, beta)
        try:
            res, owner = _evaluate(pairs, tm, cfg.samples_per_pair, coarse)
        except (EstimationError, InsufficientOverlapError):
            continue
        key = (-res.inlier_count, res.score, idx)
        if best_key is None or key < best_key:
            best_key, best = key, (beta, res, owner)
    if best is None:
        raise SyncFailedError("no offset candidate produced a consistent epipolar geometry")
    beta0, res0, owner0 = best

    # pairs that actually support the winning hypothesis
    frac = np.array([res0.inlier_mask[owner0 == k].mean() if np.any(owner0 == k) else 0.0
                     for k in range(len(pairs))])
    use = [k for k in range(len(pairs)) if frac[k] >= 0.5] or list(range(len(pairs)))

    # golden-section search on the offset
    n_ref = cfg.refine_samples_per_pair
    f = lambda b: _refine_score(pairs, TimeMap(alpha, b), n_ref, thr2, use)[0]
    g = (math.sqrt(5) - 1) / 2
    lo, hi = beta0 - cfg.beta_step, beta0 + cfg.beta_step
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > cfg.refine_tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    beta = 0.5 * (lo + hi)
    score, _ = _refine_score(pairs, TimeMap(alpha, beta), n_ref, thr2, use)
    if not score <= f(beta0):
        beta = beta0

    tm = TimeMap(alpha, beta)
    x1, x2, owner = sample_correspondences(pairs, tm, n_ref)
    try:
        res = ransac_F(x1, x2, cfg.ransac)
    except EstimationError:
        res, owner = res0, owner0
    inl = res.inlier_mask
    frac = tuple(float(inl[owner == k].mean()) if np.any(owner == k) else 0.0 for k in range(len(pairs)))
    degenerate = bool(_collinear(x1[inl]) or _collinear(x2[inl]))
    return SyncHypothesis(tm, res.model, res.inlier_count, len(inl), res.score, frac, degenerate, len(betas))


# ---------------------------------------------------------------------------
# curves from tracklets


def tracklet_curves(tracklets, intr: Intrinsics, fps: float, knot_spacing_s: float = 1.0,
                    max_gap_spans: float = 2.0) -> list[tuple[int, SplineCurve]]:
    """Undistort and fit 2D curves, splitting at gaps longer than ``max_gap_spans`` knot spans."""
    out = []
    for tr in tracklets:
        for seg in split_tracklet(tr, max_gap_spans * knot_spacing_s * fps):
            und = Tracklet(seg.camera_id, seg.object_id, seg.frames, undistort_division(seg.centers, intr))
            try:
                out.append((seg.object_id, fit_tracklet_spline(und, fps, knot_spacing_s)))
            except UnderconstrainedFitError:
                continue
    return out


def pairs_by_id(curves1, curves2, table: dict | None = None) -> list[TrajectoryPair]:
    """All segment pairs of associated objects; ``table`` maps camera-1 ids to camera-2 ids."""
    out = []
    for id1, c1 in curves1:
        want = table.get(id1) if table is not None else id1
        if want is None:
            continue
        for id2, c2 in curves2:
            if id2 == want:
                out.append(TrajectoryPair(c1, c2, id1, id2))
    return out


def associate_objects(curves1, curves2, fps1: float, fps2: float, coarse_beta_range=None,
                      cfg: SyncConfig | None = None, min_fraction: float = 0.5) -> dict:
    """Greedy object association by per-pair synchronization consensus.

    Every cross pair of objects is synchronized on its own. Pairs are then
    accepted greedily by inlier count; a joint hypothesis over the accepted
    pairs finally drops any pair it does not explain.
    """
    cfg = cfg or SyncConfig()
    if coarse_beta_range is not None:
        cfg = SyncConfig(**{**cfg.__dict__, "beta_range": tuple(coarse_beta_range)})
    ids1 = sorted({i for i, _ in curves1})
    ids2 = sorted({i for i, _ in curves2})
    scored = []
    for a in ids1:
        for b in ids2:
            pairs = pairs_by_id([c for c in curves1 if c[0] == a], [c for c in curves2 if c[0] == b])
            try:
                h = solve_sync(pairs, fps1, fps2, cfg)
            except (EstimationError, InsufficientOverlapError):
                continue
            if h.degenerate or h.inlier_samples < min_fraction * h.n_samples:
                continue
            scored.append((-h.inlier_samples / h.n_samples, -h.inlier_samples, a, b))
    scored.sort()
    table, used2 = {}, set()
    for _, _, a, b in scored:
        if a in table or b in used2:
            continue
        table[a] = b
        used2.add(b)
    if len(table) >= 2:
        pairs = pairs_by_id(curves1, curves2, table)
        try:
            h = solve_sync(pairs, fps1, fps2, cfg)
        except (EstimationError, InsufficientOverlapError):
            return table
        keep = {}
        for p, fr in zip(pairs, h.pair_inlier_fraction):
            if fr >= min_fraction:
                keep[p.id1] = p.id2
        if len(keep) >= 1:
            table = keep
    return dict(sorted(table.items()))


# ---------------------------------------------------------------------------
# several cameras


@dataclass(frozen=True, eq=False)
class PairSync:
    i: int
    j: int
    hypothesis: SyncHypothesis  # maps camera j frames to camera i frames


def consolidate_time_maps(n: int, results: list[PairSync], reference: int = 0) -> list[TimeMap]:
    """Maximum spanning tree over pairwise results (weighted by inliers), composed from the reference."""
    edges = sorted(results, key=lambda r: (-r.hypothesis.inlier_samples, r.i, r.j))
    maps = {reference: TimeMap(1.0, 0.0)}
    changed = True
    while changed:
        changed = False
        for r in edges:
            tm = r.hypothesis.time_map  # j -> i
            if r.i in maps and r.j not in maps:
                maps[r.j] = compose_time_maps(maps[r.i], tm)
                changed = True
                break
            if r.j in maps and r.i not in maps:
                maps[r.i] = compose_time_maps(maps[r.j], invert_time_map(tm))
                changed = True
                break
    missing = [k for k in range(n) if k not in maps]
    if missing:
        raise SyncFailedError(f"cameras {missing} could not be linked to the reference clock")
    return [maps[k] for k in range(n)]
