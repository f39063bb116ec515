"""B-spline curves, tracklets and linear clock mappings.

Times are expressed in frames of some camera clock. Knot vectors are clamped
and uniform, with interior knots anchored on multiples of the spacing so that
curves fitted over different spans share breakpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfDomainError, UnderconstrainedFitError

DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class TimeMap:
    """``t_dst = alpha * t_src + beta``."""

    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def __call__(self, t):
        return map_time(self, t)


def map_time(tm: TimeMap, t_src):
    return tm.alpha * np.asarray(t_src, dtype=float) + tm.beta


def invert_time_map(tm: TimeMap) -> TimeMap:
    return TimeMap(1.0 / tm.alpha, -tm.beta / tm.alpha)


def compose_time_maps(a: TimeMap, b: TimeMap) -> TimeMap:
    """The map ``t -> a(b(t))``."""
    return TimeMap(a.alpha * b.alpha, a.alpha * b.beta + a.beta)


@dataclass(frozen=True, eq=False)
class Tracklet:
    camera_id: int
    object_id: int
    frames: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float).reshape(-1)
        centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        if len(frames) != len(centers):
            raise ValueError("frames and centers differ in length")
        if len(frames) < 2:
            raise ValueError("a tracklet needs at least two samples")
        if np.any(np.diff(frames) <= 0):
            raise ValueError("tracklet frames must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "centers", centers)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.frames[0]), float(self.frames[-1])


def split_tracklet(tr: Tracklet, max_gap: float) -> list[Tracklet]:
    """Split wherever consecutive frames are more than ``max_gap`` apart; drop singleton pieces."""
    cuts = np.nonzero(np.diff(tr.frames) > max_gap)[0] + 1
    out = []
    for idx in np.split(np.arange(len(tr.frames)), cuts):
        if len(idx) >= 2:
            out.append(Tracklet(tr.camera_id, tr.object_id, tr.frames[idx], tr.centers[idx]))
    return out


@dataclass(frozen=True, eq=False)
class SplineCurve:
    degree: int
    knots: np.ndarray
    control_points: np.ndarray
    rms: float = 0.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).reshape(-1)
        cps = np.asarray(self.control_points, dtype=float)
        if cps.ndim == 1:
            cps = cps[:, None]
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if len(cps) != len(knots) - self.degree - 1:
            raise ValueError("control point count must equal len(knots) - degree - 1")
        _, counts = np.unique(knots, return_counts=True)
        if counts.max() > self.degree + 1:
            raise ValueError("knot multiplicity exceeds degree + 1")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control_points", cps)

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    @property
    def n_ctrl(self) -> int:
        return len(self.control_points)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.degree]), float(self.knots[-self.degree - 1])

    def contains(self, t, tol: float = DOMAIN_TOL):
        t = np.asarray(t, dtype=float)
        lo, hi = self.domain
        return (t >= lo - tol) & (t <= hi + tol)

    def with_control_points(self, cps) -> "SplineCurve":
        return SplineCurve(self.degree, self.knots, np.asarray(cps, dtype=float), self.rms)

    def __call__(self, t):
        return eval_spline(self, t)


def uniform_clamped_knots(t0: float, t1: float, spacing: float, degree: int = 3,
                          anchor: float = 0.0) -> np.ndarray:
    """Clamped knots on [t0, t1] with interior knots at ``anchor + k * spacing``."""
    if not t1 > t0:
        raise UnderconstrainedFitError("empty time span")
    k0 = math.floor((t0 - anchor) / spacing) + 1
    k1 = math.ceil((t1 - anchor) / spacing) - 1
    interior = anchor + spacing * np.arange(k0, k1 + 1)
    eps = 1e-9 * spacing
    interior = interior[(interior > t0 + eps) & (interior < t1 - eps)]
    return np.concatenate([np.full(degree + 1, t0), interior, np.full(degree + 1, t1)])


def _find_span(knots, degree, t):
    n_ctrl = len(knots) - degree - 1
    k = np.searchsorted(knots, t, side="right") - 1
    return np.clip(k, degree, n_ctrl - 1)


def _basis_funs(knots, degree, span, t):
    """Nonzero basis values N_{span-degree..span}; valid past the ends as polynomial continuation."""
    n = len(t)
    N = np.zeros((n, degree + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, degree + 1))
    right = np.zeros((n, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = t - knots[span + 1 - j]
        right[:, j] = knots[span + j] - t
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            with np.errstate(divide="ignore", invalid="ignore"):
                temp = np.where(denom != 0, N[:, r] / denom, 0.0)
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N


def basis_local(knots, degree, t, deriv: int = 0):
    """Return ``(first_index, values)``: ``values[:, a]`` is basis ``first_index + a`` (or its derivative)."""
    knots = np.asarray(knots, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    span = _find_span(knots, degree, t)
    if deriv == 0:
        return span - degree, _basis_funs(knots, degree, span, t)
    if deriv != 1:
        raise ValueError("only first derivatives are supported")
    out = np.zeros((len(t), degree + 1))
    if degree == 0:
        return span - degree, out
    low = _basis_funs(knots, degree - 1, span, t)  # N_{span-degree+1 .. span, degree-1}
    for a in range(degree + 1):
        i = span - degree + a
        term = np.zeros(len(t))
        if a >= 1:  # N_{i, p-1}
            den = knots[i + degree] - knots[i]
            term += np.where(den > 0, low[:, a - 1] / np.where(den > 0, den, 1.0), 0.0)
        if a <= degree - 1:  # N_{i+1, p-1}
            den = knots[i + degree + 1] - knots[i + 1]
            term -= np.where(den > 0, low[:, a] / np.where(den > 0, den, 1.0), 0.0)
        out[:, a] = degree * term
    return span - degree, out


def basis_matrix(knots, degree, t, deriv: int = 0) -> np.ndarray:
    knots = np.asarray(knots, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    first, vals = basis_local(knots, degree, t, deriv)
    B = np.zeros((len(t), len(knots) - degree - 1))
    rows = np.arange(len(t))[:, None]
    B[rows, first[:, None] + np.arange(degree + 1)] = vals
    return B


def _check_domain(s: SplineCurve, t):
    if not np.all(s.contains(t)):
        lo, hi = s.domain
        raise OutOfDomainError(f"time outside spline domain [{lo}, {hi}]")


def eval_spline(s: SplineCurve, t, extrapolate: bool = False) -> np.ndarray:
    """Evaluate the curve. Scalar ``t`` gives a vector; an array gives a stack."""
    scalar = np.ndim(t) == 0
    if not extrapolate:
        _check_domain(s, t)
    first, vals = basis_local(s.knots, s.degree, t)
    idx = first[:, None] + np.arange(s.degree + 1)
    out = np.einsum("na,nad->nd", vals, s.control_points[idx])
    return out[0] if scalar else out


def eval_spline_derivative(s: SplineCurve, t, extrapolate: bool = False) -> np.ndarray:
    scalar = np.ndim(t) == 0
    if not extrapolate:
        _check_domain(s, t)
    first, vals = basis_local(s.knots, s.degree, t, deriv=1)
    idx = first[:, None] + np.arange(s.degree + 1)
    out = np.einsum("na,nad->nd", vals, s.control_points[idx])
    return out[0] if scalar else out


def fit_spline(times, values, degree: int = 3, knot_spacing: float = 25.0,
               anchor: float = 0.0) -> SplineCurve:
    """Linear least-squares B-spline fit with clamped uniform knots.

    The returned curve carries the RMS of the fit residuals in ``rms``.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if len(times) < degree + 1:
        raise UnderconstrainedFitError(f"{len(times)} samples cannot determine a degree-{degree} spline")
    order = np.argsort(times, kind="stable")
    times, values = times[order], values[order]
    knots = uniform_clamped_knots(times[0], times[-1], knot_spacing, degree, anchor)
    B = basis_matrix(knots, degree, times)
    sv = np.linalg.svd(B, compute_uv=False)
    if len(sv) < B.shape[1] or sv[-1] <= 1e-12 * sv[0]:
        raise UnderconstrainedFitError("rank-deficient spline design matrix (a knot span holds no data)")
    cps, *_ = np.linalg.lstsq(B, values, rcond=None)
    resid = B @ cps - values
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return SplineCurve(degree, knots, cps, rms)


def fit_tracklet_spline(tr: Tracklet, fps: float, knot_spacing_s: float = 1.0,
                        degree: int = 3) -> SplineCurve:
    """Fit a 2D curve to a tracklet in its own camera's frame clock."""
    return fit_spline(tr.frames, tr.centers, degree, knot_spacing_s * fps)
