"""Camera model, division distortion, projection, triangulation and two-view relations.

Pixels are numpy arrays with a trailing dimension of 2, 3D points have a
trailing dimension of 3. Every function accepts a single point or a stack.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateGeometryError,
    InvalidIntrinsicsError,
    OutOfDomainError,
    PoseDisambiguationError,
    SingularDistortionError,
)

# Pixel / Point3 are plain arrays of shape (..., 2) / (..., 3).
Pixel = np.ndarray
Point3 = np.ndarray

_SINGULAR_EPS = 1e-12
_ORTHO_TOL = 1e-9


def d0_sane_bound(image_w: int, image_h: int) -> float:
    return 10.0 / max(image_w, image_h) ** 2


@dataclass(frozen=True)
class Intrinsics:
    f: float
    cx: float
    cy: float
    d0: float = 0.0
    image_w: int = 1920
    image_h: int = 1080

    def __post_init__(self):
        if not np.isfinite(self.f) or self.f <= 0:
            raise InvalidIntrinsicsError(f"focal length must be positive, got {self.f}")
        if not np.isfinite(self.d0) or abs(self.d0) > 100 * d0_sane_bound(self.image_w, self.image_h):
            raise InvalidIntrinsicsError(f"distortion coefficient {self.d0} is far outside the sane range")

    @classmethod
    def centered(cls, f, image_w, image_h, d0=0.0):
        """Intrinsics with the principal point at the image center."""
        return cls(float(f), image_w / 2.0, image_h / 2.0, float(d0), int(image_w), int(image_h))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, 0.0, self.cx], [0.0, self.f, self.cy], [0.0, 0.0, 1.0]])

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.image_w, self.image_h))

    def with_(self, **kw) -> "Intrinsics":
        return replace(self, **kw)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera transform ``x_cam = R @ X + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = _frozen(self.R).reshape(3, 3)
        t = _frozen(self.t).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("R is not a proper rotation")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_center(cls, R, C) -> "Pose":
        R = np.asarray(R, dtype=float)
        return cls(R, -R @ np.asarray(C, dtype=float))

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def Rt(self) -> np.ndarray:
        return np.hstack([self.R, self.t[:, None]])

    def transform(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.R.T + self.t

    def __eq__(self, other):
        return isinstance(other, Pose) and np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)


@dataclass(frozen=True)
class StreamMeta:
    id: int = 0
    fps: float = 25.0
    frame_count: int = 0

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.frame_count < 0:
            raise ValueError("frame_count must be non-negative")


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose = field(default_factory=Pose.identity)
    stream: StreamMeta = field(default_factory=StreamMeta)

    @property
    def P(self) -> np.ndarray:
        return self.intrinsics.K @ self.pose.Rt

    def with_(self, **kw) -> "Camera":
        return replace(self, **kw)


@dataclass(frozen=True)
class BrownDistortion:
    """Radial polynomial distortion on normalized coordinates (OpenCV convention)."""

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    max_discrepancy_px: float = 0.0


# ---------------------------------------------------------------------------
# distortion


def distort_division(p, intr: Intrinsics, literal: bool = False) -> np.ndarray:
    """Map undistorted pixels to distorted pixels with the one-parameter division model.

    The default form is centered on the principal point, so ``c`` is a fixed
    point. ``literal=True`` scales the uncentered pixel vector instead.
    """
    p = np.asarray(p, dtype=float)
    if intr.d0 == 0.0:
        return p.copy()
    c = intr.center
    a = p - c
    s = 1.0 + intr.d0 * np.sum(a * a, axis=-1)
    if np.any(s <= _SINGULAR_EPS):
        raise SingularDistortionError("division model denominator vanishes")
    if literal:
        return p / s[..., None]
    return c + a / s[..., None]


def undistort_division(q, intr: Intrinsics, literal: bool = False) -> np.ndarray:
    """Inverse of :func:`distort_division`.

    Picks the root of the radial quadratic that tends to the identity as d0 -> 0.
    """
    q = np.asarray(q, dtype=float)
    d = intr.d0
    if d == 0.0:
        return q.copy()
    c = intr.center
    if literal:
        qq = np.sum(q * q, axis=-1)
        qc = q @ c
        b = 1.0 + 2.0 * d * qc
        cc = 1.0 + d * float(c @ c)
        disc = b * b - 4.0 * d * qq * cc
        if np.any(disc < 0):
            raise OutOfDomainError("pixel lies beyond the division model's valid domain")
        lam = 2.0 * cc / (b + np.sqrt(disc))
        return q * lam[..., None]
    a = q - c
    disc = 1.0 - 4.0 * d * np.sum(a * a, axis=-1)
    if np.any(disc < 0):
        raise OutOfDomainError("pixel lies beyond the division model's valid domain")
    return c + a * (2.0 / (1.0 + np.sqrt(disc)))[..., None]


# ---------------------------------------------------------------------------
# projection


def project_pinhole(X, cam: Camera) -> np.ndarray:
    Xc = cam.pose.transform(X)
    z = Xc[..., 2]
    if np.any(z <= _SINGULAR_EPS):
        raise BehindCameraError("point is not in front of the camera")
    intr = cam.intrinsics
    return intr.f * Xc[..., :2] / z[..., None] + intr.center


def project(X, cam: Camera) -> np.ndarray:
    """Pinhole projection followed by the division distortion."""
    return distort_division(project_pinhole(X, cam), cam.intrinsics)


def normalized_rays(pixels_undist, intr: Intrinsics) -> np.ndarray:
    p = np.asarray(pixels_undist, dtype=float)
    m = (p - intr.center) / intr.f
    return np.concatenate([m, np.ones(m.shape[:-1] + (1,))], axis=-1)


# ---------------------------------------------------------------------------
# triangulation


def triangulate_points(cameras: Sequence[Camera], pixels, undistort: bool = True, refine: bool = True,
                       check: bool = True) -> np.ndarray:
    """Triangulate N points seen by V cameras.

    ``pixels`` has shape (V, N, 2) in raw (distorted) pixels unless
    ``undistort`` is False. Linear DLT on normalized coordinates, then a few
    Gauss-Newton steps on the pinhole reprojection error.
    """
    pixels = np.asarray(pixels, dtype=float)
    V, N = pixels.shape[:2]
    if V < 2:
        raise DegenerateGeometryError("triangulation needs at least two views")
    if undistort:
        pixels = np.stack([undistort_division(pixels[v], c.intrinsics) for v, c in enumerate(cameras)])
    rays = np.stack([normalized_rays(pixels[v], c.intrinsics) for v, c in enumerate(cameras)])

    if check:
        dirs = np.stack([rays[v] @ c.pose.R for v, c in enumerate(cameras)])
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        best = np.zeros(N)
        for a in range(V):
            for b in range(a + 1, V):
                best = np.maximum(best, np.linalg.norm(np.cross(dirs[a], dirs[b]), axis=-1))
        if np.any(best < 1e-10):
            raise DegenerateGeometryError("viewing rays are parallel")

    A = np.empty((N, 2 * V, 4))
    for v, c in enumerate(cameras):
        Rt = c.pose.Rt
        A[:, 2 * v] = rays[v, :, 0, None] * Rt[2] - Rt[0]
        A[:, 2 * v + 1] = rays[v, :, 1, None] * Rt[2] - Rt[1]
    A /= np.linalg.norm(A, axis=-1, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[:, -1]
    w = Xh[:, 3]
    w = np.where(np.abs(w) < 1e-300, 1e-300, w)
    X = Xh[:, :3] / w[:, None]

    if refine:
        X = _refine_points(cameras, rays[..., :2], X)
    return X


def _refine_points(cameras, m_obs, X, iters=5):
    """Gauss-Newton on normalized-plane residuals, weighted by focal length."""
    for _ in range(iters):
        H = np.zeros((X.shape[0], 3, 3))
        g = np.zeros((X.shape[0], 3))
        for v, c in enumerate(cameras):
            R, t, f = c.pose.R, c.pose.t, c.intrinsics.f
            Xc = X @ R.T + t
            z = Xc[:, 2]
            ok = z > 1e-9
            z = np.where(ok, z, 1.0)
            r = f * (Xc[:, :2] / z[:, None] - m_obs[v])
            J = np.zeros((X.shape[0], 2, 3))
            J[:, 0, 0] = 1 / z
            J[:, 1, 1] = 1 / z
            J[:, 0, 2] = -Xc[:, 0] / z**2
            J[:, 1, 2] = -Xc[:, 1] / z**2
            J = f * J @ R
            J[~ok] = 0
            r[~ok] = 0
            H += np.einsum("nki,nkj->nij", J, J)
            g += np.einsum("nki,nk->ni", J, r)
        H += 1e-12 * np.eye(3)
        try:
            dX = np.linalg.solve(H, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        dX = np.where(np.isfinite(dX), dX, 0.0)
        X = X - dX
        if np.abs(dX).max() < 1e-14 * (1 + np.abs(X).max()):
            break
    return X


def triangulate(observations: Sequence[tuple[Camera, Pixel]], undistort: bool = True) -> np.ndarray:
    """Triangulate one point from a list of ``(camera, raw pixel)`` pairs."""
    cams = [c for c, _ in observations]
    px = np.array([np.asarray(p, dtype=float).reshape(1, 2) for _, p in observations])
    return triangulate_points(cams, px, undistort=undistort)[0]


# ---------------------------------------------------------------------------
# two-view relations


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fundamental_from_cameras(cam1: Camera, cam2: Camera) -> np.ndarray:
    """Ground-truth F (unit Frobenius norm) in undistorted pixel coordinates."""
    if np.linalg.norm(cam1.pose.center - cam2.pose.center) < 1e-12:
        raise DegenerateGeometryError("camera centers coincide")
    R = cam2.pose.R @ cam1.pose.R.T
    t = cam2.pose.t - R @ cam1.pose.t
    E = skew(t) @ R
    F = np.linalg.inv(cam2.intrinsics.K).T @ E @ np.linalg.inv(cam1.intrinsics.K)
    return F / np.linalg.norm(F)


def epipoles(F) -> tuple[np.ndarray, np.ndarray]:
    """Right epipole ``e1`` (F e1 = 0) and left epipole ``e2`` (F^T e2 = 0)."""
    U, _, Vt = np.linalg.svd(F)
    return Vt[-1], U[:, -1]


def focal_from_fundamental(F, pp1, pp2) -> tuple[float, float]:
    """Closed-form focal lengths of both views (Bougnoux), zero skew, known principal points."""
    F = np.asarray(F, dtype=float)
    F = F / np.linalg.norm(F)
    p1 = np.array([pp1[0], pp1[1], 1.0])
    p2 = np.array([pp2[0], pp2[1], 1.0])
    e1, e2 = epipoles(F)
    I3 = np.diag([1.0, 1.0, 0.0])

    num1 = (p2 @ skew(e2) @ I3 @ F @ p1) * (p1 @ F.T @ p2)
    den1 = p2 @ skew(e2) @ I3 @ F @ I3 @ F.T @ p2
    num2 = (p1 @ skew(e1) @ I3 @ F.T @ p2) * (p2 @ F @ p1)
    den2 = p1 @ skew(e1) @ I3 @ F.T @ I3 @ F @ p1

    with np.errstate(divide="ignore", invalid="ignore"):
        f1sq = -num1 / den1
        f2sq = -num2 / den2
    if not (np.isfinite(f1sq) and np.isfinite(f2sq)) or f1sq <= 0 or f2sq <= 0:
        raise DegenerateGeometryError(
            f"focal recovery is degenerate for this configuration (f1^2={f1sq:.3g}, f2^2={f2sq:.3g})")
    return float(np.sqrt(f1sq)), float(np.sqrt(f2sq))


def _rotation_angle(R) -> float:
    return float(np.arccos(np.clip((np.trace(R) - 1) / 2, -1.0, 1.0)))


def essential_candidates(E):
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    out = []
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for s in (1.0, -1.0):
            out.append((R, s * t))
    return out


def relative_pose_from_F(F, intr1: Intrinsics, intr2: Intrinsics, x1, x2,
                         inlier_threshold_px: float = 4.0) -> tuple[Pose, Pose]:
    """Relative pose with the first camera at the origin and a unit baseline.

    ``x1``/``x2`` are undistorted pixels used to resolve the four-fold
    ambiguity; only matches whose Sampson error w.r.t. ``F`` is below the
    threshold take part.
    """
    from .robust import sampson_distance

    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    keep = sampson_distance(F, x1, x2) < inlier_threshold_px**2
    x1, x2 = x1[keep], x2[keep]
    if len(x1) < 1:
        raise PoseDisambiguationError("no match is consistent with F")
    E = intr2.K.T @ np.asarray(F, dtype=float) @ intr1.K
    cam_a = Camera(intr1.with_(d0=0.0))
    best, best_count = None, -1
    for R, t in essential_candidates(E):
        cam_b = Camera(intr2.with_(d0=0.0), Pose(R, t))
        X = triangulate_points([cam_a, cam_b], np.stack([x1, x2]), undistort=False, refine=False, check=False)
        z1 = X[:, 2]
        z2 = (X @ R.T + t)[:, 2]
        count = int(np.sum((z1 > 0) & (z2 > 0)))
        if count > best_count:
            best, best_count = (R, t), count
    if best_count * 2 <= len(x1):
        raise PoseDisambiguationError(
            f"no cheirality-consistent pose ({best_count}/{len(x1)} points in front)")
    R, t = best
    return Pose.identity(), Pose(R, t / np.linalg.norm(t))


# ---------------------------------------------------------------------------
# Brown conversion


def brown_distort(p, intr: Intrinsics, brown: BrownDistortion) -> np.ndarray:
    """Forward Brown mapping (undistorted -> distorted pixels), radial terms only."""
    p = np.asarray(p, dtype=float)
    x = (p - intr.center) / intr.f
    r2 = np.sum(x * x, axis=-1)
    g = 1 + brown.k1 * r2 + brown.k2 * r2**2 + brown.k3 * r2**3
    return intr.center + intr.f * x * g[..., None]


def brown_undistort(q, intr: Intrinsics, brown: BrownDistortion, iters: int = 50) -> np.ndarray:
    """Invert :func:`brown_distort` by fixed-point iteration (as OpenCV does)."""
    q = np.asarray(q, dtype=float)
    xd = (q - intr.center) / intr.f
    x = xd.copy()
    for _ in range(iters):
        r2 = np.sum(x * x, axis=-1)
        g = 1 + brown.k1 * r2 + brown.k2 * r2**2 + brown.k3 * r2**3
        x = xd / g[..., None]
    return intr.center + intr.f * x


def division_to_brown(intr: Intrinsics, coverage: float = 0.95, samples: int = 400) -> BrownDistortion:
    """Least-squares fit of k1..k3 to the division model's forward mapping.

    The fit covers distorted radii up to ``coverage`` of the half diagonal.
    A warning is emitted (not raised) when the worst discrepancy exceeds 0.5 px.
    """
    if intr.d0 == 0.0:
        return BrownDistortion()
    rq = np.linspace(0.0, coverage * intr.diagonal / 2.0, samples)
    pts = np.stack([intr.cx + rq, np.full_like(rq, intr.cy)], axis=-1)
    rp = undistort_division(pts, intr)[:, 0] - intr.cx
    x = rp / intr.f
    r2 = x * x
    A = np.stack([x * r2, x * r2**2, x * r2**3], axis=-1)
    b = rq / intr.f - x
    # Lawson reweighting drives the least-squares fit toward the minimax fit.
    w = np.full(samples, 1.0 / samples)
    for _ in range(100):
        sw = np.sqrt(w)
        k, *_ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
        e = np.abs(A @ k - b)
        if e.sum() == 0:
            break
        w = w * e
        w /= w.sum()
    err = intr.f * np.abs(A @ k - b)
    brown = BrownDistortion(float(k[0]), float(k[1]), float(k[2]), 0.0, 0.0, float(err.max()))
    if brown.max_discrepancy_px > 0.5:
        warnings.warn(f"Brown conversion discrepancy {brown.max_discrepancy_px:.3f} px exceeds 0.5 px",
                      RuntimeWarning, stacklevel=2)
    return brown


def rotation_angle_between(R1, R2) -> float:
    return _rotation_angle(np.asarray(R1) @ np.asarray(R2).T)
