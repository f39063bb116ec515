"""Robust two-view estimation: normalized eight-point F, RANSAC with local
optimization, and joint estimation of F with one division coefficient per view.

The distortion pair is found by scoring a finite candidate grid with RANSAC
and then refining F and both coefficients on the inliers by minimizing the
Sampson error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import CalibrationFailedError, DegenerateSampleError, EstimationError
from .geometry import Intrinsics, undistort_division

REFERENCE_DIAGONAL = math.hypot(1920, 1080)


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 2.0
    max_iterations: int = 1000
    confidence: float = 0.999
    rng_seed: int = 0
    lo_iterations: int = 3
    batch_size: int = 100

    def __post_init__(self):
        if not self.threshold_px > 0:
            raise ValueError("threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")

    def scaled(self, image_w: int, image_h: int) -> "RansacConfig":
        """Scale the threshold from its 1080p reference to another image diagonal."""
        from dataclasses import replace
        return replace(self, threshold_px=self.threshold_px * math.hypot(image_w, image_h) / REFERENCE_DIAGONAL)


@dataclass(eq=False)
class RansacResult:
    model: np.ndarray
    inlier_mask: np.ndarray
    score: float
    iterations: int

    @property
    def inlier_count(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))


def hartley_normalize(x):
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    d = np.sqrt(np.sum((x - mean) ** 2, axis=1)).mean()
    s = math.sqrt(2) / d if d > 0 else 1.0
    T = np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])
    return (x - mean) * s, T


def _design(x1, x2):
    """Rows of the linear system ``x2^T F x1 = 0`` for F in row-major order."""
    u1, v1 = x1[..., 0], x1[..., 1]
    u2, v2 = x2[..., 0], x2[..., 1]
    one = np.ones_like(u1)
    return np.stack([u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, one], axis=-1)


def _enforce_rank2(F):
    U, s, Vt = np.linalg.svd(F)
    s[..., 2] = 0.0
    return (U * s[..., None, :]) @ Vt


def eight_point_F(x1, x2) -> np.ndarray:
    """Normalized eight-point algorithm; returns a rank-2 F with unit Frobenius norm."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if len(x1) < 8 or len(x1) != len(x2):
        raise DegenerateSampleError("the eight-point algorithm needs at least 8 matches")
    n1, T1 = hartley_normalize(x1)
    n2, T2 = hartley_normalize(x2)
    A = _design(n1, n2)
    _, s, Vt = np.linalg.svd(A)
    if s[7] <= 1e-10 * s[0]:
        raise DegenerateSampleError("design matrix has rank below 8")
    Fn = _enforce_rank2(Vt[-1].reshape(3, 3))
    F = T2.T @ Fn @ T1
    F = _enforce_rank2(F)
    return F / np.linalg.norm(F)


def sampson_distance(F, x1, x2) -> np.ndarray:
    """First-order geometric error (squared pixels) of each correspondence."""
    F = np.asarray(F, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    h1 = np.concatenate([x1, np.ones(x1.shape[:-1] + (1,))], axis=-1)
    h2 = np.concatenate([x2, np.ones(x2.shape[:-1] + (1,))], axis=-1)
    Fx1 = h1 @ np.swapaxes(F, -1, -2)
    Ftx2 = h2 @ F
    e = np.sum(h2 * Fx1, axis=-1)
    den = Fx1[..., 0] ** 2 + Fx1[..., 1] ** 2 + Ftx2[..., 0] ** 2 + Ftx2[..., 1] ** 2
    return e * e / np.maximum(den, 1e-300)


def normalized_epipolar_residuals(F, x1, x2) -> np.ndarray:
    """Algebraic residuals ``x2^T F x1`` after Hartley normalization of both point sets."""
    n1, T1 = hartley_normalize(x1)
    n2, T2 = hartley_normalize(x2)
    Fn = np.linalg.inv(T2).T @ F @ np.linalg.inv(T1)
    Fn /= np.linalg.norm(Fn)
    h1 = np.c_[n1, np.ones(len(n1))]
    h2 = np.c_[n2, np.ones(len(n2))]
    return np.einsum("ni,ij,nj->n", h2, Fn, h1)


def _required_iterations(inlier_ratio, confidence, sample_size=8):
    w = inlier_ratio**sample_size
    if w <= 0:
        return math.inf
    if w >= 1:
        return 1
    return math.log(1 - confidence) / math.log(1 - w)


def _score(F, x1, x2, thr2):
    d = sampson_distance(F, x1, x2)
    mask = d < thr2
    count = int(np.count_nonzero(mask))
    score = float(d[mask].mean()) if count else math.inf
    return mask, count, score


def ransac_F(x1, x2, cfg: RansacConfig = RansacConfig()) -> RansacResult:
    """RANSAC over eight-point samples, then local re-estimation on the inliers.

    Hypotheses are compared by (inlier count desc, mean inlier Sampson error
    asc, hypothesis index asc), so results are reproducible for a given seed.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    n = len(x1)
    if n < 8:
        raise EstimationError("RANSAC needs at least 8 matches")
    thr2 = cfg.threshold_px**2
    rng = np.random.default_rng(cfg.rng_seed)
    n1, T1 = hartley_normalize(x1)
    n2, T2 = hartley_normalize(x2)

    best_key, best_F = (0, math.inf), None
    done, needed = 0, cfg.max_iterations
    while done < min(needed, cfg.max_iterations):
        b = min(cfg.batch_size, cfg.max_iterations - done)
        idx = np.argpartition(rng.random((b, n)), 7, axis=1)[:, :8] if n > 8 else np.tile(np.arange(8), (b, 1))
        A = _design(n1[idx], n2[idx])
        _, s, Vt = np.linalg.svd(A)
        ok = s[:, 7] > 1e-10 * s[:, 0]
        Fs = _enforce_rank2(Vt[:, -1].reshape(b, 3, 3))
        Fs = T2.T @ Fs @ T1
        Fs /= np.linalg.norm(Fs, axis=(1, 2), keepdims=True)
        d = sampson_distance(Fs, x1, x2)
        mask = d < thr2
        counts = np.where(ok, mask.sum(axis=1), 0)
        with np.errstate(invalid="ignore"):
            scores = np.where(counts > 0, np.where(mask, d, 0).sum(axis=1) / np.maximum(counts, 1), np.inf)
        for k in np.lexsort((np.arange(b), scores, -counts))[:1]:
            key = (int(counts[k]), float(scores[k]))
            if key[0] > best_key[0] or (key[0] == best_key[0] and key[1] < best_key[1]):
                best_key, best_F = key, Fs[k]
        done += b
        needed = _required_iterations(best_key[0] / n, cfg.confidence)

    if best_F is None:
        raise EstimationError("no non-degenerate sample found")
    mask, count, score = _score(best_F, x1, x2, thr2)
    F = best_F
    for _ in range(cfg.lo_iterations):
        if count < 8:
            break
        try:
            F_new = eight_point_F(x1[mask], x2[mask])
        except DegenerateSampleError:
            break
        m2, c2, s2 = _score(F_new, x1, x2, thr2)
        if c2 > count or (c2 == count and s2 < score):
            F, mask, count, score = F_new, m2, c2, s2
        else:
            break
    # support beyond the minimal sample itself
    if count < 8 + min(8, n - 8):
        raise EstimationError(f"best model has only {count} inliers")
    return RansacResult(F, mask, score, done)


# ---------------------------------------------------------------------------
# F with two division coefficients


def default_distortion_grid(n: int = 13, allow_positive: bool = False) -> np.ndarray:
    """Candidate (d0_1, d0_2) pairs: 0 plus log-spaced magnitudes 1e-8..1e-5."""
    mags = np.r_[0.0, np.geomspace(1e-8, 1e-5, n - 1)]
    vals = np.unique(np.r_[-mags, mags]) if allow_positive else -mags
    a, b = np.meshgrid(vals, vals, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


@dataclass(eq=False)
class CalibrationResult:
    F: np.ndarray
    d0_1: float
    d0_2: float
    ransac: RansacResult
    coverage: tuple[float, float] = (1.0, 1.0)
    low_coverage: bool = False
    grid_index: int = -1
    grid_scores: list = field(default_factory=list)


def _rot(w):
    return Rotation.from_rotvec(w).as_matrix()


def refine_F_and_distortion(x1, x2, F, d1, d2, intr1: Intrinsics, intr2: Intrinsics, d_scale: float = 1e-7):
    """Minimize Sampson error over (F, d0_1, d0_2), F kept rank 2 via an orthonormal parametrization."""
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    u1 = undistort_division(x1, intr1.with_(d0=d1))
    u2 = undistort_division(x2, intr2.with_(d0=d2))
    _, T1 = hartley_normalize(u1)
    _, T2 = hartley_normalize(u2)
    Fn = np.linalg.inv(T2).T @ F @ np.linalg.inv(T1)
    U, s, Vt = np.linalg.svd(Fn)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    sigma0 = s[1] / s[0]

    def unpack(p):
        Fn_ = U @ _rot(p[0:3]) @ np.diag([1.0, p[6], 0.0]) @ (Vt.T @ _rot(p[3:6])).T
        return T2.T @ Fn_ @ T1, p[7] * d_scale, p[8] * d_scale

    def resid(p):
        F_, a, b = unpack(p)
        try:
            y1 = undistort_division(x1, intr1.with_(d0=a))
            y2 = undistort_division(x2, intr2.with_(d0=b))
        except Exception:
            return np.full(len(x1), 1e6)
        h1 = np.c_[y1, np.ones(len(y1))]
        h2 = np.c_[y2, np.ones(len(y2))]
        Fx1 = h1 @ F_.T
        Ftx2 = h2 @ F_
        e = np.sum(h2 * Fx1, axis=1)
        den = np.sqrt(Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2)
        return e / np.maximum(den, 1e-300)

    p0 = np.r_[np.zeros(6), sigma0, d1 / d_scale, d2 / d_scale]
    sol = least_squares(resid, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    p = sol.x if sol.cost <= 0.5 * np.sum(resid(p0) ** 2) else p0
    F_, a, b = unpack(p)
    F_ = _enforce_rank2(F_)
    return F_ / np.linalg.norm(F_), float(a), float(b)


def _coverage(x, intr: Intrinsics) -> float:
    if len(x) == 0:
        return 0.0
    w = np.ptp(x[:, 0]) * np.ptp(x[:, 1])
    return float(w / (intr.image_w * intr.image_h))


def estimate_F_and_distortion(x1, x2, intr1: Intrinsics, intr2: Intrinsics,
                              cfg: RansacConfig = RansacConfig(), d_grid=None,
                              min_coverage: float = 0.2) -> CalibrationResult:
    """Fundamental matrix and one division coefficient per camera from raw matches.

    Only the principal points and image sizes of ``intr1``/``intr2`` are used.
    """
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    if len(x1) < 8:
        raise CalibrationFailedError("calibration needs at least 8 matches")
    grid = default_distortion_grid() if d_grid is None else np.asarray(d_grid, float).reshape(-1, 2)

    best = None
    scores = []
    for gi, (a, b) in enumerate(grid):
        try:
            u1 = undistort_division(x1, intr1.with_(d0=float(a)))
            u2 = undistort_division(x2, intr2.with_(d0=float(b)))
            res = ransac_F(u1, u2, cfg)
        except Exception:
            scores.append((0, math.inf))
            continue
        key = (-res.inlier_count, res.score, abs(a) + abs(b), gi)
        scores.append((res.inlier_count, res.score))
        if best is None or key < best[0]:
            best = (key, gi, res)
    if best is None:
        raise CalibrationFailedError("no distortion candidate reached 8 inliers")
    _, gi, res = best
    d1, d2 = float(grid[gi, 0]), float(grid[gi, 1])

    m = res.inlier_mask
    F, r1, r2 = refine_F_and_distortion(x1[m], x2[m], res.model, d1, d2, intr1, intr2)
    thr2 = cfg.threshold_px**2
    u1 = undistort_division(x1, intr1.with_(d0=r1))
    u2 = undistort_division(x2, intr2.with_(d0=r2))
    mask, count, score = _score(F, u1, u2, thr2)
    if count < res.inlier_count:
        # refinement must not lose support; keep the grid estimate
        F, r1, r2 = res.model, d1, d2
        u1 = undistort_division(x1, intr1.with_(d0=r1))
        u2 = undistort_division(x2, intr2.with_(d0=r2))
        mask, count, score = _score(F, u1, u2, thr2)
    final = RansacResult(F, mask, score, res.iterations)
    cov = (_coverage(x1[mask], intr1), _coverage(x2[mask], intr2))
    return CalibrationResult(F, r1, r2, final, cov, min(cov) < min_coverage, gi, scores)
