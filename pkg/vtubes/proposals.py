import logging
import numpy as np
from collections import namedtuple
from .config import LocalizeConfig
from .error import DataError
from .geometry import mask_points, project

"""
Per-frame object proposals and their robust 3D localization.

A proposal arrives with a mask, an objectness score and a class posterior
over 80 known categories plus 'unknown' (last entry).  Its 3D position,
velocity and size are computed from the depth and scene flow under its mask.
"""

logger = logging.getLogger(__name__)

NUM_CLASSES = 81
UNKNOWN_CLASS = 80
POSTERIOR_TOL = 1e-6
# posteriors off by at most this much are renormalized on construction
POSTERIOR_LOAD_TOL = 1e-3

Localization = namedtuple('Localization',
        ['position', 'velocity', 'size', 'valid_3d', 'has_flow', 'num_points'])

class FrameProposal(object):
    """
    One object hypothesis in one frame.  {index} is its position within the
    frame's proposal list and serves as a deterministic tie-breaker.
    """
    def __init__(self, frame, mask, objectness, class_posterior, index=0):
        self.frame = int(frame)
        self.mask = mask
        self.objectness = float(objectness)
        self.class_posterior = _normalized(class_posterior)
        self.index = int(index)
        self.position = np.zeros(3)
        self.velocity = np.zeros(3)
        self.size = np.zeros(3)
        self.valid_3d = False
        self.has_flow = False
        self.check()

    def check(self, tol=POSTERIOR_TOL):
        if not (0.0 <= self.objectness <= 1.0):
            raise DataError(
                f'{type(self).__qualname__}: objectness must be in [0, 1], got '
                f'{self.objectness}')
        post = self.class_posterior
        if post.shape != (NUM_CLASSES,):
            raise DataError(
                f'{type(self).__qualname__}: class_posterior must have '
                f'{NUM_CLASSES} entries, got {post.shape}')
        if np.any(post < 0) or abs(post.sum() - 1.0) > tol:
            raise DataError(
                f'{type(self).__qualname__}: class_posterior must be '
                f'nonnegative and sum to 1 (sum = {post.sum():.6g})')

    def __repr__(self):
        pos = np.round(self.position, 3).tolist() if self.valid_3d else None
        return (f'{type(self).__qualname__}(frame={self.frame}, '
                f'index={self.index}, objectness={self.objectness:.3f}, '
                f'area={self.mask.area}, position={pos})')

    @property
    def category(self):
        return int(np.argmax(self.class_posterior))

    @property
    def is_known(self):
        return self.category != UNKNOWN_CLASS

    @property
    def observation(self):
        """
        Kalman observation vector (position, velocity)
        """
        return np.r_[self.position, self.velocity]

    def set_localization(self, loc):
        self.position = np.asarray(loc.position, dtype=float)
        self.velocity = np.asarray(loc.velocity, dtype=float)
        self.size = np.asarray(loc.size, dtype=float)
        self.valid_3d = bool(loc.valid_3d)
        self.has_flow = bool(loc.has_flow)

def _normalized(posterior):
    post = np.array(posterior, dtype=float)
    total = post.sum()
    if post.ndim == 1 and np.all(post >= 0) and abs(total - 1.0) <= POSTERIOR_LOAD_TOL:
        post /= total
    return post

def localize(mask, depth, flows, ego, K, cfg=None):
    """
    Robust 3D position, velocity and size of the object under {mask}.

    position: component-wise median of the backprojected valid-depth pixels
    size: component-wise (hi - lo) percentile extent of the same points
    velocity: component-wise median of the egomotion-compensated flow
        (point_cur - ego(point_prev)) of the flow vectors whose current-frame
        pixel falls inside the mask; zero with has_flow False if none do.

    valid_3d is False when fewer than cfg.min_points depth points exist.
    """
    cfg = cfg or LocalizeConfig()
    depth.check_camera(K)
    pts, _, _ = mask_points(mask, depth, K)
    zero = np.zeros(3)
    if len(pts) < cfg.min_points:
        return Localization(zero, zero, zero, False, False, len(pts))

    position = np.median(pts, axis=0)
    lo, hi = np.percentile(pts, [cfg.lo_percentile, cfg.hi_percentile], axis=0)
    size = np.maximum(hi - lo, 0.0)

    velocity, has_flow = zero, False
    hits = _flows_in_mask(mask, flows, K)
    if len(hits) > 0:
        prev = np.array([f.point_prev for f in hits])
        cur = np.array([f.point_cur for f in hits])
        velocity = np.median(cur - ego.apply(prev), axis=0)
        has_flow = True
    return Localization(position, velocity, size, True, has_flow, len(pts))

def _flows_in_mask(mask, flows, K):
    if len(flows) == 0:
        return []
    pix = []
    for f in flows:
        if f.pixel_cur is not None:
            pix.append(f.pixel_cur)
        else:
            pix.append(project(f.point_cur, K))
    pix = np.rint(np.array(pix)).astype(np.int64)
    inside = ((pix[:, 0] >= 0) & (pix[:, 0] < mask.width) &
              (pix[:, 1] >= 0) & (pix[:, 1] < mask.height))
    hit = np.zeros(len(flows), dtype=bool)
    hit[inside] = mask.bits[pix[inside, 1], pix[inside, 0]]
    return [f for f, h in zip(flows, hit) if h]

def localize_frame(proposals, depth, flows, ego, K, cfg=None):
    """
    Localize every proposal of one frame in place.  Returns the number with
    valid 3D.
    """
    nvalid = 0
    for prop in proposals:
        loc = localize(prop.mask, depth, flows, ego, K, cfg)
        prop.set_localization(loc)
        nvalid += int(loc.valid_3d)
    if nvalid < len(proposals):
        logger.debug(f'localize_frame: {len(proposals) - nvalid} of '
                f'{len(proposals)} proposals lack 3D support')
    return nvalid

