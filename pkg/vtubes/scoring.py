import logging
import numpy as np
from .config import ScoringConfig
from .error import NumericalError
from .kalman import gaussian_logpdf
from .mask import mask_iou

"""
Log-likelihood-ratio tube scores.  Each component compares the tube's
observations against a null hypothesis of random clutter and sums per-frame
terms over the tube's inlier frames:

  motion      ln N(p_gp; p~_gp, S~_gp) - ln(1 / area_gp)
  mask        ln IoU(m~, m)            - ln(1 / alpha)
  objectness  ln score                 - ln(1 / beta)

p_gp is the ground-plane (x, z) part of the localized position; p~_gp and
S~_gp are the matching marginal of the stored Kalman prediction.  The seed
frame has no prediction and contributes 0 to motion and mask.  Misses
contribute 0 everywhere.
"""

logger = logging.getLogger(__name__)

GROUND = [0, 2]

def _frames(tube, span):
    frames = tube.inlier_frames
    if span is not None:
        n, m = span
        frames = [t for t in frames if n <= t <= m]
    return frames

def motion_terms(tube, cfg=None, span=None):
    """
    Per-frame motion terms, as a dict frame -> value
    """
    cfg = cfg or ScoringConfig()
    null = np.log(cfg.area_gp)
    terms = {}
    for t in _frames(tube, span):
        tf = tube.frames[t]
        if not tf.has_prediction:
            continue
        obs = tf.proposal.position[GROUND]
        mean = tf.pred_pos[GROUND]
        cov = tf.pred_cov[np.ix_(GROUND, GROUND)]
        try:
            terms[t] = gaussian_logpdf(obs, mean, cov) + null
        except NumericalError as ex:
            logger.warning(f'motion_score: tube {tube.id} frame {t} skipped: '
                    f'{ex.msg}')
    return terms

def mask_terms(tube, cfg=None, span=None):
    cfg = cfg or ScoringConfig()
    null = np.log(cfg.alpha)
    terms = {}
    for t in _frames(tube, span):
        tf = tube.frames[t]
        if not tf.has_prediction:
            continue
        if tf.pred_mask is None:
            logger.warning(f'mask_score: tube {tube.id} frame {t} has no stored '
                    f'mask prediction; contributes 0')
            continue
        iou = mask_iou(tf.pred_mask, tf.proposal.mask)
        terms[t] = np.log(max(iou, cfg.iou_floor)) + null
    return terms

def objectness_terms(tube, cfg=None, span=None):
    cfg = cfg or ScoringConfig()
    null = np.log(cfg.beta)
    return { t: np.log(max(tube.frames[t].proposal.objectness, cfg.score_floor))
            + null for t in _frames(tube, span) }

def motion_score(tube, cfg=None, span=None):
    return float(sum(motion_terms(tube, cfg, span).values()))

def mask_score(tube, cfg=None, span=None):
    return float(sum(mask_terms(tube, cfg, span).values()))

def objectness_score(tube, cfg=None, span=None):
    return float(sum(objectness_terms(tube, cfg, span).values()))

def tube_score(tube, cfg=None):
    """
    Weighted sum w1 * motion + w2 * mask + w3 * objectness.  All components
    and the total are stored in tube.scores.
    """
    cfg = cfg or ScoringConfig()
    motion = motion_score(tube, cfg)
    mask = mask_score(tube, cfg)
    objectness = objectness_score(tube, cfg)
    total = cfg.w1 * motion + cfg.w2 * mask + cfg.w3 * objectness
    tube.scores = { 'motion': motion, 'mask': mask, 'objectness': objectness,
            'total': total }
    return total

def score_tubes(tubes, cfg=None):
    for tube in tubes:
        tube_score(tube, cfg)
    return tubes

def rescore(tubes, cfg):
    """
    Recompute only the weighted total from stored components, for tuning the
    weights without touching the per-frame terms
    """
    for tube in tubes:
        s = tube.scores
        s['total'] = cfg.w1 * s['motion'] + cfg.w2 * s['mask'] + cfg.w3 * s['objectness']
    return tubes
