import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dynsfm.geometry import Camera, Intrinsics, Pose, project


def look_at(center, target, up=(0.0, -1.0, 0.0)):
    """Rotation of a camera at ``center`` looking at ``target`` (y axis pointing down)."""
    center = np.asarray(center, float)
    z = np.asarray(target, float) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, float), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def make_pair(f1=1500.0, f2=900.0, d1=0.0, d2=0.0, seed=0):
    rng = np.random.default_rng(seed)
    c1 = np.array([0.0, 0.1, 0.0])
    c2 = np.array([1.0, -0.15, 0.2])
    target = np.array([0.4, 0.0, 4.0])
    R1 = look_at(c1, target + [0.0, 0.3, 0.0])
    R2 = look_at(c2, target + [0.0, -0.3, 0.0]) @ Rotation.from_rotvec(rng.normal(0, 0.02, 3)).as_matrix()
    cam1 = Camera(Intrinsics.centered(f1, 1920, 1080, d1), Pose.from_center(R1, c1))
    cam2 = Camera(Intrinsics.centered(f2, 1920, 1080, d2), Pose.from_center(R2, c2))
    return cam1, cam2


def visible_points(cams, n, seed=0, box=((-1.5, 2.0), (-1.0, 1.0), (3.0, 6.0))):
    """Random points whose projections fall inside every image."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        X = np.array([rng.uniform(*box[0]), rng.uniform(*box[1]), rng.uniform(*box[2])])
        ok = True
        for c in cams:
            if c.pose.transform(X)[2] <= 0.1:
                ok = False
                break
            u = project(X, c)
            if not (0 <= u[0] < c.intrinsics.image_w and 0 <= u[1] < c.intrinsics.image_h):
                ok = False
                break
        if ok:
            out.append(X)
    return np.array(out)


@pytest.fixture
def pair():
    return make_pair()


@pytest.fixture
def distorted_pair():
    return make_pair(d1=-4e-7, d2=-2e-7)


# acceptance criteria register their verdicts here; printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
