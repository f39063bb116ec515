import numpy as np
import pytest

from dynsfm.errors import InsufficientOverlapError, SyncFailedError
from dynsfm.robust import RansacConfig
from dynsfm.splines import TimeMap, map_time
from dynsfm.sync import (PairSync, SyncConfig, SyncHypothesis, associate_objects, candidate_offsets,
                         consolidate_time_maps, pairs_by_id, sample_correspondences, solve_sync, tracklet_curves)
from dynsfm.synthgen import SynthConfig, generate

SHORT = SynthConfig(duration_s=30.0, n_static_points=20, beta=[0.0, 23.0], n_objects=4)


def camera_curves(data, truth, cam):
    meta = data.cameras[cam]
    return tracklet_curves(data.tracklets(meta.id), truth.scene.cameras[cam].intrinsics, meta.fps)


@pytest.fixture(scope="module")
def short_curves():
    data, truth = generate(SHORT)
    return data, truth, camera_curves(data, truth, 0), camera_curves(data, truth, 1)


def test_candidate_offsets_cover_overlapping_shifts():
    b = candidate_offsets((0, 100), (0, 50), step=5, alpha=1.0, min_overlap=10)
    assert b[0] == -40 and b[-1] == 90
    assert all(v % 5 == 0 for v in b)
    assert candidate_offsets((0, 10), (0, 10), step=1, min_overlap=20) == []
    with pytest.raises(ValueError):
        candidate_offsets((0, 1), (0, 1), step=0)


def test_sampled_pairs_agree_under_true_map(short_curves):
    data, truth, c1, c2 = short_curves
    pairs = pairs_by_id(c1, c2)
    tm = truth.time_maps[1]
    x1, x2, owner = sample_correspondences(pairs, tm, 50)
    assert len(x1) == len(x2) == len(owner) and len(x1) >= 8
    with pytest.raises(InsufficientOverlapError):
        sample_correspondences(pairs, TimeMap(tm.alpha, 1e6), 50)


def test_recovers_offset_and_rate(short_curves):
    data, truth, c1, c2 = short_curves
    h = solve_sync(pairs_by_id(c1, c2), data.cameras[0].fps, data.cameras[1].fps)
    assert h.time_map.alpha == pytest.approx(0.6)
    assert h.time_map.beta == pytest.approx(23.0, abs=0.5)
    assert h.inlier_samples > 0.9 * h.n_samples
    assert not h.degenerate


def test_recovers_offset_with_noise():
    data, truth = generate(SynthConfig(**{**SHORT.to_dict(), "noise_px": 1.0}))
    h = solve_sync(pairs_by_id(camera_curves(data, truth, 0), camera_curves(data, truth, 1)), 15.0, 25.0)
    assert h.time_map.beta == pytest.approx(23.0, abs=2.0)


def test_deterministic(short_curves):
    data, truth, c1, c2 = short_curves
    cfg = SyncConfig(ransac=RansacConfig(max_iterations=200, rng_seed=4))
    a = solve_sync(pairs_by_id(c1, c2), 15.0, 25.0, cfg)
    b = solve_sync(pairs_by_id(c1, c2), 15.0, 25.0, cfg)
    assert a.time_map == b.time_map and a.inlier_samples == b.inlier_samples


def test_no_pairs_fails():
    with pytest.raises(SyncFailedError):
        solve_sync([], 15.0, 25.0)


def test_association_under_shuffled_ids():
    cfg = SynthConfig(**{**SHORT.to_dict(), "shuffle_object_ids": True, "rng_seed": 1})
    data, truth = generate(cfg)
    c1, c2 = camera_curves(data, truth, 0), camera_curves(data, truth, 1)
    table = associate_objects(c1, c2, 15.0, 25.0, coarse_beta_range=(0, 50))
    ids0, ids1 = truth.object_ids
    expected = {ids0[q]: ids1[q] for q in range(cfg.n_objects)}
    assert table and all(expected[a] == b for a, b in table.items())


def _hyp(alpha, beta, inliers):
    return SyncHypothesis(TimeMap(alpha, beta), np.eye(3), inliers, 100, 0.0)


def test_consolidation_composes_along_strongest_links():
    # true maps to camera 0: cam1 = (0.5, 10), cam2 = (2, -4)
    r01 = PairSync(0, 1, _hyp(0.5, 10, 90))
    # cam2 -> cam1: t1 = (t0 - 10) / 0.5 with t0 = 2 t2 - 4
    r12 = PairSync(1, 2, _hyp(4.0, -28.0, 80))
    r02 = PairSync(0, 2, _hyp(2.0, 999.0, 5))  # weak and wrong
    tms = consolidate_time_maps(3, [r02, r12, r01], reference=0)
    assert tms[0] == TimeMap(1.0, 0.0)
    assert tms[1] == TimeMap(0.5, 10.0)
    assert tms[2].alpha == pytest.approx(2.0) and tms[2].beta == pytest.approx(-4.0)
    t = np.array([0.0, 7.0])
    assert np.allclose(map_time(tms[2], t), 2 * t - 4)


def test_consolidation_reports_unlinked_cameras():
    with pytest.raises(SyncFailedError):
        consolidate_time_maps(3, [PairSync(0, 1, _hyp(1, 0, 10))])
