import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from conftest import make_pair, visible_points
from dynsfm.errors import (BehindCameraError, DegenerateGeometryError, InvalidIntrinsicsError,
                           PoseDisambiguationError)
from dynsfm.geometry import (Camera, Intrinsics, Pose, brown_undistort, distort_division,
                             division_to_brown, focal_from_fundamental, fundamental_from_cameras,
                             project, project_pinhole, relative_pose_from_F, rotation_angle_between,
                             triangulate, triangulate_points, undistort_division)

coef = st.floats(-2.7e-6, 0.0)
pix = st.tuples(st.floats(0, 1920), st.floats(0, 1080))


def test_intrinsics_validation():
    with pytest.raises(InvalidIntrinsicsError):
        Intrinsics.centered(-5, 1920, 1080)
    with pytest.raises(InvalidIntrinsicsError):
        Intrinsics.centered(1000, 1920, 1080, d0=-1e-3)
    Intrinsics.centered(1000, 1920, 1080, d0=-2e-4)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


@given(coef, pix)
def test_principal_point_is_fixed(d0, _):
    intr = Intrinsics.centered(1000, 1920, 1080, d0)
    np.testing.assert_array_equal(distort_division(intr.center, intr), intr.center)
    np.testing.assert_array_equal(undistort_division(intr.center, intr), intr.center)


@given(pix)
def test_zero_coefficient_is_identity(p):
    intr = Intrinsics.centered(1000, 1920, 1080, 0.0)
    p = np.array(p)
    np.testing.assert_array_equal(distort_division(p, intr), p)
    np.testing.assert_array_equal(undistort_division(p, intr), p)


def test_distort_hand_value():
    intr = Intrinsics(1000.0, 0.0, 0.0, -1e-6, 1920, 1080)
    np.testing.assert_allclose(distort_division([400.0, 0.0], intr), [400 / 0.84, 0.0], rtol=1e-14)
    assert distort_division([400.0, 0.0], intr)[0] == pytest.approx(476.1905, abs=1e-4)


def test_round_trip_random_pixels():
    rng = np.random.default_rng(1)
    intr = Intrinsics.centered(1200, 1920, 1080, -5e-7)
    q = rng.uniform([0, 0], [1920, 1080], size=(1000, 2))
    err = np.abs(distort_division(undistort_division(q, intr), intr) - q).max()
    assert err < 1e-9


@settings(max_examples=200)
@given(coef, pix)
def test_round_trip_property(d0, q):
    intr = Intrinsics.centered(1000, 1920, 1080, d0)
    q = np.array(q)
    assert np.abs(distort_division(undistort_division(q, intr), intr) - q).max() < 1e-9


@given(st.floats(-5e-7, 1e-7), pix)
def test_literal_form_round_trip(d0, p):
    intr = Intrinsics.centered(1000, 1920, 1080, d0)
    p = np.array(p) * 0.5 + intr.center * 0.25
    q = distort_division(p, intr, literal=True)
    assert np.abs(undistort_division(q, intr, literal=True) - p).max() < 1e-8


def test_project_on_axis_and_hand_value():
    intr = Intrinsics(1000.0, 960.0, 540.0, 0.0)
    cam = Camera(intr)
    np.testing.assert_allclose(project([0, 0, 5.0], cam), [960, 540])
    np.testing.assert_allclose(project([1.0, 0, 10.0], cam), [1060, 540])


def test_project_decomposes(distorted_pair):
    cam = distorted_pair[0]
    X = visible_points([cam], 50, seed=3)
    R, t, intr = cam.pose.R, cam.pose.t, cam.intrinsics
    Xc = X @ R.T + t
    uv = Xc[:, :2] / Xc[:, 2:]
    pin = intr.f * uv + intr.center
    np.testing.assert_allclose(project(X, cam), distort_division(pin, intr), rtol=0, atol=1e-9)
    np.testing.assert_allclose(project_pinhole(X, cam), pin, atol=1e-9)


def test_project_behind_camera():
    with pytest.raises(BehindCameraError):
        project([0, 0, -1.0], Camera(Intrinsics.centered(1000, 1920, 1080)))


def test_triangulate_noiseless(distorted_pair):
    cams = distorted_pair
    X = visible_points(cams, 30, seed=4)
    for x in X:
        Y = triangulate([(c, project(x, c)) for c in cams])
        assert np.abs(Y - x).max() < 1e-8
        for c in cams:
            assert np.abs(project(Y, c) - project(x, c)).max() < 1e-6


def test_triangulate_point_at_infinity_is_degenerate(pair):
    direction = np.array([0.1, 0.0, 1.0])
    obs = []
    for c in pair:
        d = c.pose.R @ direction
        obs.append((c, c.intrinsics.f * d[:2] / d[2] + c.intrinsics.center))
    with pytest.raises(DegenerateGeometryError):
        triangulate(obs)


def test_triangulate_three_views_monte_carlo():
    cam1, cam2 = make_pair()
    cam3 = Camera(Intrinsics.centered(1100, 1920, 1080),
                  Pose.from_center(cam1.pose.R @ Rotation.from_euler("y", -8, degrees=True).as_matrix(),
                                   [-0.8, 0.0, 0.3]))
    cams = [cam1, cam2, cam3]
    X = visible_points(cams, 300, seed=5)
    rng = np.random.default_rng(6)
    obs = np.stack([project(X, c) for c in cams])
    noisy = obs + rng.normal(0, 0.5, obs.shape)
    Y = triangulate_points(cams, noisy)
    rmse = np.sqrt(np.mean(np.sum((np.stack([project(Y, c) for c in cams]) - noisy) ** 2, axis=-1)))
    assert rmse <= 1.5


def test_fundamental_pure_translation():
    intr = Intrinsics(1.0, 0.0, 0.0, 0.0, 2, 2)
    cam1 = Camera(intr)
    cam2 = Camera(intr, Pose(np.eye(3), [-1.0, 0.0, 0.0]))
    F = fundamental_from_cameras(cam1, cam2)
    expected = np.array([[0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]]) / np.sqrt(2)
    assert np.allclose(F, expected) or np.allclose(F, -expected)
    rng = np.random.default_rng(0)
    X = rng.uniform([-1, -1, 2], [1, 1, 5], (50, 3))
    x1 = np.c_[X[:, :2] / X[:, 2:], np.ones(50)]
    Xc = X + [-1, 0, 0]
    x2 = np.c_[Xc[:, :2] / Xc[:, 2:], np.ones(50)]
    assert np.abs(np.einsum("ni,ij,nj->n", x2, F, x1)).max() < 1e-12


def test_fundamental_same_camera_rejected(pair):
    with pytest.raises(DegenerateGeometryError):
        fundamental_from_cameras(pair[0], pair[0])


def test_fundamental_random_pair_normalized_residuals(pair):
    cam1, cam2 = pair
    X = visible_points(pair, 100, seed=7)
    F = fundamental_from_cameras(cam1, cam2)
    assert np.linalg.matrix_rank(F, tol=1e-10) == 2
    # normalized image coordinates
    En = cam2.intrinsics.K.T @ F @ cam1.intrinsics.K
    En /= np.linalg.norm(En)
    m1 = np.c_[(project(X, cam1) - cam1.intrinsics.center) / cam1.intrinsics.f, np.ones(100)]
    m2 = np.c_[(project(X, cam2) - cam2.intrinsics.center) / cam2.intrinsics.f, np.ones(100)]
    assert np.abs(np.einsum("ni,ij,nj->n", m2, En, m1)).max() < 1e-10


def test_focal_from_fundamental_recovers_truth(pair):
    cam1, cam2 = pair
    F = fundamental_from_cameras(cam1, cam2)
    f1, f2 = focal_from_fundamental(F, cam1.intrinsics.center, cam2.intrinsics.center)
    assert abs(f1 - 1500) / 1500 < 1e-6
    assert abs(f2 - 900) / 900 < 1e-6


def test_focal_from_fundamental_coplanar_axes_degenerate():
    # optical axes intersect: both cameras look at the same point
    from conftest import look_at
    target = np.array([0.5, 0.0, 5.0])
    cams = [Camera(Intrinsics.centered(1000, 1920, 1080), Pose.from_center(look_at(c, target), c))
            for c in (np.zeros(3), np.array([1.0, 0.0, 0.0]))]
    F = fundamental_from_cameras(*cams)
    with pytest.raises(DegenerateGeometryError):
        focal_from_fundamental(F, cams[0].intrinsics.center, cams[1].intrinsics.center)


def test_relative_pose_noiseless(pair):
    cam1, cam2 = pair
    X = visible_points(pair, 50, seed=8)
    x1, x2 = project(X, cam1), project(X, cam2)
    F = fundamental_from_cameras(cam1, cam2)
    P1, P2 = relative_pose_from_F(F, cam1.intrinsics, cam2.intrinsics, x1, x2)
    assert P1 == Pose.identity()
    R_true = cam2.pose.R @ cam1.pose.R.T
    t_true = cam2.pose.t - R_true @ cam1.pose.t
    assert rotation_angle_between(P2.R, R_true) < 1e-6
    cosang = P2.t @ t_true / np.linalg.norm(t_true)
    assert np.arccos(min(1.0, cosang)) < 1e-6
    assert np.linalg.norm(P2.t) == pytest.approx(1.0)


def test_relative_pose_noisy_monte_carlo(pair):
    from dynsfm.robust import eight_point_F
    cam1, cam2 = pair
    rng = np.random.default_rng(9)
    X = visible_points(pair, 200, seed=9)
    x1 = project(X, cam1) + rng.normal(0, 0.5, (200, 2))
    x2 = project(X, cam2) + rng.normal(0, 0.5, (200, 2))
    F = eight_point_F(x1, x2)
    _, P2 = relative_pose_from_F(F, cam1.intrinsics, cam2.intrinsics, x1, x2)
    R_true = cam2.pose.R @ cam1.pose.R.T
    assert np.degrees(rotation_angle_between(P2.R, R_true)) < 0.5


def test_relative_pose_all_outliers(pair):
    cam1, cam2 = pair
    F = fundamental_from_cameras(cam1, cam2)
    rng = np.random.default_rng(10)
    x1 = rng.uniform([0, 0], [1920, 1080], (100, 2))
    x2 = rng.uniform([0, 0], [1920, 1080], (100, 2))
    x2 += 50.0 * np.sign(x2 - [960, 540])  # push every match well off its epipolar line
    from dynsfm.robust import sampson_distance
    keep = sampson_distance(F, x1, x2) >= 16.0
    with pytest.raises(PoseDisambiguationError):
        relative_pose_from_F(F, cam1.intrinsics, cam2.intrinsics, x1[keep], x2[keep])


def test_division_to_brown():
    assert division_to_brown(Intrinsics.centered(1000, 1920, 1080)).k1 == 0.0
    intr = Intrinsics.centered(1000, 1920, 1080, -5e-7)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        b = division_to_brown(intr)
    assert b.max_discrepancy_px < 0.1
    assert b.p1 == 0.0 and b.p2 == 0.0
    # undistortion through Brown agrees with the division model on the interior 90%
    rng = np.random.default_rng(11)
    q = rng.uniform([96, 54], [1824, 1026], (2000, 2))
    assert np.abs(brown_undistort(q, intr, b) - undistort_division(q, intr)).max() < 0.2


def test_division_to_brown_warns_on_strong_distortion():
    with pytest.warns(RuntimeWarning):
        division_to_brown(Intrinsics.centered(1000, 1920, 1080, -2e-6))
