import numpy as np
import pytest
from vtubes.config import ScoringConfig
from vtubes.mask import BitMask
from vtubes.scoring import (motion_score, mask_score, objectness_score,
        tube_score, score_tubes, rescore, motion_terms)
from vtubes.tracking import Tube, TubeFrame
from conftest import make_proposal

W, H = 64, 48

def scored_tube(n, objectness=1.0, pred_shift=0, offset=(0.0, 0.0)):
    """
    n inlier frames; every frame after the seed is predicted exactly (up to
    {offset} meters on the ground plane and a {pred_shift} pixel mask shift)
    with ground-plane covariance diag(0.25, 0.25)
    """
    tube = Tube(0)
    cov = np.diag([0.25, 1.0, 0.25])
    for t in range(n):
        mask = BitMask.from_box(W, H, 10, 10, 30, 30)
        prop = make_proposal(t, mask, [1.0, 0.5, 12.0], objectness=objectness)
        if t == 0:
            tube.frames[t] = TubeFrame(t, prop, None)
            continue
        pred = np.array([1.0 + offset[0], 0.5, 12.0 + offset[1]])
        tube.frames[t] = TubeFrame(t, prop, None, None, pred, cov,
                mask.shifted(pred_shift, 0))
    return tube

def test_motion_closed_form():
    tube = scored_tube(11)
    term = np.log(1.0 / (2 * np.pi * 0.25)) + np.log(4000.0)
    assert motion_score(tube) == pytest.approx(10 * term, rel=1e-9)
    assert sorted(motion_terms(tube)) == list(range(1, 11))

def test_motion_penalizes_distance():
    near = motion_score(scored_tube(11, offset=(0.1, 0.0)))
    far = motion_score(scored_tube(11, offset=(1.0, 1.0)))
    assert far < near < motion_score(scored_tube(11))

def test_mask_closed_form():
    tube = scored_tube(11)
    assert mask_score(tube) == pytest.approx(10 * np.log(20.0), rel=1e-9)

def test_mask_floor():
    tube = scored_tube(3, pred_shift=40)
    cfg = ScoringConfig()
    expect = 2 * (np.log(cfg.iou_floor) + np.log(cfg.alpha))
    assert mask_score(tube, cfg) == pytest.approx(expect)

def test_objectness_closed_form():
    tube = scored_tube(5)
    assert objectness_score(tube) == pytest.approx(5 * np.log(10.0), rel=1e-9)

def test_null_level_observations_score_zero():
    tube = scored_tube(6, objectness=0.1)
    assert objectness_score(tube, ScoringConfig(beta=10.0)) == pytest.approx(0.0,
            abs=1e-12)
    # a 20x20 box against one shifted by 19 px: IoU = 20 / 780
    shifted = scored_tube(6, pred_shift=19)
    alpha = 780 / 20
    assert mask_score(shifted, ScoringConfig(alpha=alpha)) == pytest.approx(0.0,
            abs=1e-12)

def test_scores_add_over_frame_ranges():
    tube = scored_tube(11, objectness=0.7, offset=(0.2, -0.1), pred_shift=1)
    for score in (motion_score, mask_score, objectness_score):
        whole = score(tube)
        assert score(tube, None, (0, 4)) + score(tube, None, (5, 10)) == \
                pytest.approx(whole, rel=1e-12)

def test_misses_contribute_nothing():
    tube = scored_tube(11)
    base = tube_score(tube)
    tube.frames[11] = TubeFrame(11, None, None, None, np.zeros(3), np.eye(3))
    assert tube_score(tube) == base

def test_weighted_total():
    tube = scored_tube(11, objectness=0.5)
    cfg = ScoringConfig(w1=2.0, w2=0.0, w3=1.0)
    total = tube_score(tube, cfg)
    s = tube.scores
    assert total == s['total']
    assert total == pytest.approx(2 * s['motion'] + s['objectness'])
    rescore([tube], ScoringConfig(w1=0.0, w2=1.0, w3=0.0))
    assert tube.scores['total'] == s['mask']

def test_score_tubes_sets_every_tube():
    tubes = score_tubes([scored_tube(4), scored_tube(6)])
    assert all(set(t.scores) == {'motion', 'mask', 'objectness', 'total'}
            for t in tubes)
    assert tubes[1].scores['total'] > tubes[0].scores['total']
