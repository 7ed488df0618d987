import itertools
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from vtubes.error import UsageError
from vtubes.evaluate import (TubeTrack, clear_mot, optimal_assignment,
        recall_curve, loc_error_by_distance, rank_average_precision,
        temporal_iou, track_score, image_candidates)
from vtubes.kalman import KalmanState
from vtubes.mask import BitMask
from vtubes.tracking import Tube, TubeFrame
from conftest import make_proposal

W, H = 60, 20

def box(x0):
    return BitMask.from_box(W, H, x0, 2, x0 + 10, 12)

def track(tid, frames, x0=0, positions=None, score=1.0):
    return TubeTrack(tid, { t: box(x0) for t in frames },
            { t: np.asarray(p) for t, p in (positions or {}).items() },
            scores={ 'total': score })

def test_perfect_tracking():
    gt = [track(0, range(10)), track(1, range(5), x0=30)]
    pred = [track(7, range(10)), track(8, range(5), x0=30)]
    mot = clear_mot(gt, pred)
    assert mot.mota == 1.0
    assert (mot.misses, mot.false_positives, mot.id_switches) == (0, 0, 0)
    assert mot.total_gt == 15 and mot.matches == 15

def test_no_predictions():
    mot = clear_mot([track(0, range(10))], [])
    assert mot.mota == 0.0 and mot.misses == 10

def test_no_ground_truth():
    mot = clear_mot([], [track(0, range(3))])
    assert np.isnan(mot.mota)
    assert mot.false_positives == 3

def test_split_track_is_one_switch():
    gt = [track(0, range(10))]
    pred = [track(1, range(5)), track(2, range(5, 10))]
    mot = clear_mot(gt, pred)
    assert mot.id_switches == 1
    assert mot.mota == pytest.approx(0.9)

def test_correspondence_is_kept():
    # two predictions cover the object equally well after frame 2: the
    # established one keeps it
    gt = [track(0, range(6))]
    pred = [track(1, range(6)), track(2, range(3, 6))]
    mot = clear_mot(gt, pred)
    assert mot.id_switches == 0
    assert mot.false_positives == 3
    assert all(pid == 1 for _, _, pid in mot.matched_pairs())

def test_threshold_above_one_matches_nothing():
    gt = [track(0, range(4))]
    mot = clear_mot(gt, [track(1, range(4))], iou_threshold=1.01)
    assert mot.matches == 0
    assert mot.misses == 4 and mot.false_positives == 4

def test_box_matching():
    bits = np.zeros((H, W), dtype=bool)
    bits[2:12, 0] = True
    bits[11, 0:10] = True
    l_shape = TubeTrack(1, { 0: BitMask(bits) })
    gt = [track(0, [0])]
    assert clear_mot(gt, [l_shape]).matches == 0
    assert clear_mot(gt, [l_shape], use_box=True).matches == 1

@given(hnp.arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)),
    elements=st.floats(0, 1)), st.floats(0, 1))
def test_assignment_is_optimal(iou, threshold):
    pairs = optimal_assignment(iou, threshold)
    assert all(iou[r, c] >= threshold for r, c in pairs)
    assert len({r for r, _ in pairs}) == len(pairs) == len({c for _, c in pairs})
    got = sum(iou[r, c] for r, c in pairs)
    n, m = iou.shape
    best = 0.0
    for perm in itertools.permutations(range(max(n, m)), min(n, m)):
        rows = range(n) if n <= m else perm
        cols = perm if n <= m else range(m)
        total = sum(iou[r, c] for r, c in zip(rows, cols) if iou[r, c] >= threshold)
        best = max(best, total)
    assert got == pytest.approx(best, abs=1e-9)

def test_recall_curve_tube_level():
    gt = [track(0, range(4)), track(1, range(4), x0=30)]
    cands = [track(5, range(4), score=3.0), track(6, range(2), x0=30, score=2.0),
            track(7, range(4), x0=15, score=5.0)]
    curve = recall_curve(cands, gt, budgets=(1, 2, 3, 10))
    assert curve == [(1, 0.0), (2, 0.5), (3, 0.75), (10, 0.75)]
    values = [r for _, r in curve]
    assert values == sorted(values)

def test_recall_curve_image_level():
    gt = [track(0, range(2))]
    cands = { 0: [(0.9, box(40)), (0.5, box(0))], 1: [(0.2, box(0))] }
    assert recall_curve(cands, gt, budgets=(1, 2)) == [(1, 0.5), (2, 1.0)]

def test_image_candidates(camera):
    mask = BitMask.from_box(camera.width, camera.height, 0, 0, 5, 5)
    props = [[make_proposal(0, mask, [0, 0, 5], objectness=0.3)],
            [make_proposal(1, mask, [0, 0, 5], objectness=0.6)]]
    cands = image_candidates(props)
    assert sorted(cands) == [0, 1]
    assert cands[1][0][0] == 0.6

def test_loc_error_bins():
    gt = [track(0, range(3), positions={ t: [0.0, 0.0, 15.0] for t in range(3) }),
            track(1, range(2), x0=30,
                positions={ t: [0.0, 0.0, 45.0] for t in range(2) })]
    exact = [track(5, range(3), positions={ t: [0.0, 0.0, 15.0] for t in range(3) })]
    bins = loc_error_by_distance(gt, exact)
    assert [(b.lo, b.hi, b.num_gt) for b in bins] == [(10.0, 20.0, 3),
            (40.0, 60.0, 2)]
    assert bins[0].recall == 1.0 and bins[0].mean_error == 0.0
    assert bins[1].recall == 0.0 and bins[1].mean_error is None
    shifted = [track(5, range(3), positions={ t: [0.0, 0.0, 15.5] for t in range(3) })]
    assert loc_error_by_distance(gt, shifted)[0].mean_error == pytest.approx(0.5)

def test_temporal_iou():
    a = track(0, range(4))
    assert temporal_iou(a, a) == 1.0
    assert temporal_iou(a, track(1, range(2))) == pytest.approx(0.5)
    assert temporal_iou(a, track(2, range(4), x0=30)) == 0.0

def test_rank_average_precision():
    gt = [track(0, range(4)), track(1, range(4), x0=30)]
    good_first = [track(5, range(4), score=3.0), track(6, range(4), x0=30, score=2.0),
            track(7, range(4), x0=15, score=1.0)]
    assert rank_average_precision(good_first, gt) == 1.0
    bad_first = [track(5, range(4), score=1.0), track(6, range(4), x0=30, score=2.0),
            track(7, range(4), x0=15, score=5.0)]
    assert rank_average_precision(bad_first, gt) == pytest.approx((1 / 2 + 2 / 3) / 2)
    # duplicates cannot claim the same object twice
    dup = [track(5, range(4), score=3.0), track(6, range(4), score=2.0)]
    assert rank_average_precision(dup, gt) == pytest.approx(0.5)

def test_track_score_keys():
    tr = TubeTrack(0, {}, scores={ 'mask': 1.5, 'motion': 2.0 })
    assert track_score(tr, 'mask+motion') == 3.5
    with pytest.raises(UsageError):
        track_score(tr, 'total')

def test_track_from_tube_fills_gaps():
    tube = Tube(3)
    state = KalmanState(np.r_[0.0, 0, 10, 0, 0, 0], np.eye(6))
    for t in (0, 1, 4):
        tube.frames[t] = TubeFrame(t, make_proposal(t, box(t), [0, 0, 10]), state)
    tube.frames[2] = TubeFrame(2, None, state, pred_mask=box(20))
    tube.frames[3] = TubeFrame(3, None, state, pred_mask=BitMask.empty(W, H))
    tube.scores = { 'total': 7.0 }
    filled = TubeTrack.from_tube(tube)
    assert filled.inlier_frames == [0, 1, 2, 3, 4]
    assert filled.mask_at(2) == box(20)
    assert filled.mask_at(3) == box(20)
    assert np.allclose(filled.position_at(3), [0, 0, 10])
    assert filled.selected and filled.scores == { 'total': 7.0 }
    sparse = TubeTrack.from_tube(tube, fill_gaps=False)
    assert sparse.inlier_frames == [0, 1, 4]
