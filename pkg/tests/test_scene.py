import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dynsfm.scene import ReconstructionMode
from dynsfm.synthgen import SynthConfig, generate

SMALL = SynthConfig(n_static_points=20, n_objects=2, duration_s=12, fps=[5.0, 8.0], beta=[0.0, 3.0])


@pytest.fixture(scope="module")
def truth():
    return generate(SMALL)[1]


def test_mode_parsing():
    assert ReconstructionMode.parse("SD_sc") is ReconstructionMode.SD_SC
    assert ReconstructionMode.parse(ReconstructionMode.SO) is ReconstructionMode.SO
    assert not ReconstructionMode.SO.uses_dynamic and ReconstructionMode.SD_UN.uses_dynamic
    with pytest.raises(ValueError):
        ReconstructionMode.parse("bogus")


def test_validate_catches_dangling_indices(truth):
    s = truth.scene
    assert s.validate()
    bad = s.copy(static_pt=np.r_[s.static_pt[:-1], len(s.points)])
    with pytest.raises(ValueError):
        bad.validate()
    with pytest.raises(ValueError):
        s.copy(dyn_obj=np.full(len(s.dyn_obj), 7)).validate()


def test_copy_is_independent(truth):
    s = truth.scene
    c = s.copy()
    c.points[0, 0] += 1.0
    c.time_maps[1] = c.time_maps[0]
    assert s.points[0, 0] != c.points[0, 0] and s.time_maps[1] != c.time_maps[1]


def test_similarity_preserves_projections(truth):
    from dynsfm.geometry import project
    s = truth.scene
    R = Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix()
    moved = s.transformed(R, np.array([1.0, 2.0, -3.0]), 2.5)
    for k in range(s.n_cameras):
        a = project(s.points, s.cameras[k])
        b = project(moved.points, moved.cameras[k])
        assert np.allclose(a, b, atol=1e-8)


def test_normalize_gauge(truth):
    g = truth.scene.transformed(Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix(), np.ones(3), 3.0).normalize_gauge()
    ref = g.cameras[g.reference].pose
    assert np.allclose(ref.R, np.eye(3), atol=1e-12) and np.allclose(ref.t, 0, atol=1e-12)
    assert g.baseline() == pytest.approx(1.0, abs=1e-12)


def test_dynamic_index_set_respects_curve_domains(truth):
    s = truth.scene
    mask = s.dynamic_index_set()
    assert mask.all()
    o = s.objects[0]
    shifted = s.copy(time_maps=[s.time_maps[0], type(s.time_maps[1])(s.time_maps[1].alpha, 1e6)])
    assert not shifted.dynamic_index_set()[shifted.dyn_cam == 1].any()
    assert o.curve.contains(s.dyn_times()[(s.dyn_obj == 0)]).all()
