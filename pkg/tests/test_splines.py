import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.interpolate import BSpline

from dynsfm.errors import OutOfDomainError, UnderconstrainedFitError
from dynsfm.splines import (SplineCurve, TimeMap, Tracklet, basis_matrix, compose_time_maps,
                            eval_spline, eval_spline_derivative, fit_spline, invert_time_map,
                            map_time, split_tracklet, uniform_clamped_knots)


def random_curve(seed=0, dim=3, span=(0.0, 100.0), spacing=12.5):
    rng = np.random.default_rng(seed)
    knots = uniform_clamped_knots(*span, spacing, 3)
    return SplineCurve(3, knots, rng.normal(size=(len(knots) - 4, dim)))


def test_basis_matches_scipy():
    s = random_curve(1)
    t = np.linspace(*s.domain, 777)
    ref = BSpline(s.knots, s.control_points, 3)(t)
    np.testing.assert_allclose(eval_spline(s, t), ref, atol=1e-12)
    np.testing.assert_allclose(eval_spline_derivative(s, t), BSpline(s.knots, s.control_points, 3).derivative()(t),
                               atol=1e-11)


def test_partition_of_unity():
    rng = np.random.default_rng(2)
    knots = uniform_clamped_knots(3.3, 97.1, 7.0)
    t = rng.uniform(3.3, 97.1, 1000)
    assert np.abs(basis_matrix(knots, 3, t).sum(axis=1) - 1).max() < 1e-12


def test_clamped_start_and_constant_curve():
    s = random_curve(3)
    np.testing.assert_allclose(eval_spline(s, s.domain[0]), s.control_points[0], atol=1e-14)
    np.testing.assert_allclose(eval_spline(s, s.domain[1]), s.control_points[-1], atol=1e-14)
    const = s.with_control_points(np.tile([1.0, -2.0, 3.0], (s.n_ctrl, 1)))
    np.testing.assert_allclose(eval_spline(const, np.linspace(*s.domain, 50)), np.tile([1.0, -2.0, 3.0], (50, 1)),
                               atol=1e-13)


def test_finite_difference_derivative():
    s = random_curve(4)
    t = np.linspace(s.domain[0] + 1, s.domain[1] - 1, 40)
    h = 1e-5
    fd = (eval_spline(s, t + h) - eval_spline(s, t - h)) / (2 * h)
    an = eval_spline_derivative(s, t)
    assert np.abs(fd - an).max() / np.abs(an).max() < 1e-6


def test_out_of_domain():
    s = random_curve(5)
    with pytest.raises(OutOfDomainError):
        eval_spline(s, s.domain[1] + 0.5)
    with pytest.raises(OutOfDomainError):
        eval_spline(s, s.domain[0] - 0.5)


def test_continuity_across_knots():
    s = random_curve(6)
    for k in np.unique(s.knots)[1:-1]:
        for fn in (eval_spline, eval_spline_derivative):
            a, b = fn(s, k - 1e-9), fn(s, k + 1e-9)
            assert np.abs(a - b).max() < 1e-6


def test_locality():
    s = random_curve(7)
    cps = s.control_points.copy()
    i = 5
    cps[i] += 10.0
    s2 = s.with_control_points(cps)
    t = np.linspace(*s.domain, 2001)
    changed = np.any(np.abs(eval_spline(s2, t) - eval_spline(s, t)) > 0, axis=1)
    lo, hi = s.knots[i], s.knots[i + s.degree + 1]
    assert np.all((t[changed] >= lo) & (t[changed] <= hi))


def test_fit_line_and_cubic_reproduction():
    t = np.linspace(0, 60, 200)
    line = np.stack([3 * t + 1, -2 * t + 5], axis=1)
    s = fit_spline(t, line, 3, 10.0)
    assert np.abs(eval_spline(s, t) - line).max() < 1e-9
    cubic = 0.001 * t**3 - 0.05 * t**2 + t - 4
    s = fit_spline(t, cubic, 3, 100.0)  # knot spacing beyond the span: a single polynomial piece
    assert len(s.knots) == 8
    assert np.abs(eval_spline(s, t)[:, 0] - cubic).max() < 1e-8
    assert s.rms < 1e-8


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(2.0, 40.0))
def test_polynomial_reproduction_property(coeffs, spacing):
    t = np.linspace(-5, 55, 120)
    y = np.polyval(coeffs, t / 10.0)
    s = fit_spline(t, y, 3, spacing)
    assert np.abs(eval_spline(s, t)[:, 0] - y).max() < 1e-8


def test_fit_too_few_samples():
    with pytest.raises(UnderconstrainedFitError):
        fit_spline([0.0, 1.0, 2.0], [[0.0], [1.0], [0.0]], 3, 10.0)


def test_fit_empty_knot_span():
    t = np.r_[np.linspace(0, 10, 30), np.linspace(50, 60, 30)]
    with pytest.raises(UnderconstrainedFitError):
        fit_spline(t, np.sin(t), 3, 5.0)


def test_least_squares_matches_normal_equations():
    rng = np.random.default_rng(8)
    t = np.sort(rng.uniform(0, 40, 80))
    y = rng.normal(size=(80, 2))
    s = fit_spline(t, y, 3, 8.0)
    B = basis_matrix(s.knots, 3, t)
    ref = np.linalg.solve(B.T @ B, B.T @ y)
    np.testing.assert_allclose(s.control_points, ref, atol=1e-9)
    assert s.rms == pytest.approx(np.sqrt(np.mean(np.sum((B @ ref - y) ** 2, axis=1))))


def test_anchored_knots_share_breakpoints():
    k1 = uniform_clamped_knots(3.2, 47.9, 10.0)
    k2 = uniform_clamped_knots(11.0, 80.0, 10.0)
    np.testing.assert_array_equal(k1[4:-4], [10, 20, 30, 40])
    np.testing.assert_array_equal(k2[4:-4], [20, 30, 40, 50, 60, 70])


def test_time_map_examples():
    assert map_time(TimeMap(1.0, 0.0), 12.5) == 12.5
    tm = TimeMap(25 / 15, 0.0)
    assert map_time(tm, 15) == pytest.approx(25.0)
    inv = invert_time_map(TimeMap(2.0, 3.0))
    assert (inv.alpha, inv.beta) == (0.5, -1.5)
    c = compose_time_maps(TimeMap(2.0, 0.0), TimeMap(1.0, 5.0))
    assert (c.alpha, c.beta) == (2.0, 10.0)
    with pytest.raises(ValueError):
        TimeMap(0.0, 1.0)


maps = st.builds(TimeMap, st.floats(0.1, 10.0), st.floats(-1000, 1000))


@given(maps)
def test_time_map_inverse_laws(tm):
    ident = compose_time_maps(tm, invert_time_map(tm))
    assert abs(ident.alpha - 1) < 1e-12 and abs(ident.beta) < 1e-12 * max(1.0, abs(tm.beta))
    back = invert_time_map(invert_time_map(tm))
    assert back.alpha == pytest.approx(tm.alpha, rel=1e-12) and back.beta == pytest.approx(tm.beta, rel=1e-12, abs=1e-9)


@given(maps, maps, maps, st.floats(-500, 500))
def test_time_map_associative(a, b, c, t):
    left = compose_time_maps(compose_time_maps(a, b), c)
    right = compose_time_maps(a, compose_time_maps(b, c))
    assert map_time(left, t) == pytest.approx(map_time(right, t), rel=1e-9, abs=1e-6)


def test_tracklet_invariants_and_split():
    with pytest.raises(ValueError):
        Tracklet(0, 0, [1, 1], [[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        Tracklet(0, 0, [1], [[0, 0]])
    frames = np.r_[np.arange(0, 40), np.arange(100, 150)]
    tr = Tracklet(0, 3, frames, np.zeros((len(frames), 2)))
    parts = split_tracklet(tr, max_gap=50)
    assert [p.span for p in parts] == [(0.0, 39.0), (100.0, 149.0)]
    assert all(p.object_id == 3 for p in parts)
