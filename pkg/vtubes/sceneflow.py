import logging
from collections import namedtuple
import numpy as np
from scipy.spatial.transform import Rotation
from .config import FlowConfig
from .error import GeometryError, NumericalError
from .geometry import RigidMotion

"""
Sparse scene flow and egomotion from quad feature matches.

A quad match links one feature across the four images of two consecutive
stereo frames: left/right at t-1 and left/right at t.  The matcher that
produced it walked the cycle left_prev -> right_prev -> right_cur ->
left_cur and then matched left_cur back into the previous left image; the
location of that closing match is `left_prev_back`.  The cycle closes when
`left_prev_back` returns to `left_prev`.
"""

logger = logging.getLogger(__name__)

# per-frame egomotion; ok is False when estimation failed and identity is used
EgoEstimate = namedtuple('EgoEstimate', ['motion', 'ok'])

class QuadMatch(object):
    __slots__ = ('frame', 'left_prev', 'right_prev', 'left_cur', 'right_cur',
            'left_prev_back')

    def __init__(self, frame, left_prev, right_prev, left_cur, right_cur,
            left_prev_back=None):
        self.frame = int(frame)
        self.left_prev = np.array(left_prev, dtype=float).reshape(2)
        self.right_prev = np.array(right_prev, dtype=float).reshape(2)
        self.left_cur = np.array(left_cur, dtype=float).reshape(2)
        self.right_cur = np.array(right_cur, dtype=float).reshape(2)
        if left_prev_back is None:
            self.left_prev_back = self.left_prev.copy()
        else:
            self.left_prev_back = np.array(left_prev_back, dtype=float).reshape(2)

    def __repr__(self):
        return (f'{type(self).__qualname__}(frame={self.frame}, '
                f'lp={self.left_prev.tolist()}, rp={self.right_prev.tolist()}, '
                f'lc={self.left_cur.tolist()}, rc={self.right_cur.tolist()})')

    def pixels(self):
        return (self.left_prev, self.right_prev, self.left_cur, self.right_cur)

    def in_bounds(self, K):
        pix = np.stack(self.pixels())
        return bool(np.all((pix[:, 0] >= 0) & (pix[:, 0] <= K.width - 1) &
                (pix[:, 1] >= 0) & (pix[:, 1] <= K.height - 1)))

    @property
    def epipolar_prev(self):
        return abs(self.left_prev[1] - self.right_prev[1])

    @property
    def epipolar_cur(self):
        return abs(self.left_cur[1] - self.right_cur[1])

    @property
    def cycle_residual(self):
        return float(np.linalg.norm(self.left_prev_back - self.left_prev))

    def to_dict(self):
        return { 'frame': self.frame,
                'left_prev': self.left_prev.tolist(),
                'right_prev': self.right_prev.tolist(),
                'left_cur': self.left_cur.tolist(),
                'right_cur': self.right_cur.tolist(),
                'left_prev_back': self.left_prev_back.tolist() }

    @classmethod
    def from_dict(cls, d):
        return cls(d['frame'], d['left_prev'], d['right_prev'], d['left_cur'],
                d['right_cur'], d.get('left_prev_back'))

class SceneFlowVector(object):
    """
    A feature triangulated at t-1 and at t, each in its own camera frame.
    flow = point_cur - point_prev, with no egomotion compensation.
    """
    __slots__ = ('point_prev', 'point_cur', 'flow', 'pixel_cur')

    def __init__(self, point_prev, point_cur, pixel_cur=None):
        self.point_prev = np.array(point_prev, dtype=float).reshape(3)
        self.point_cur = np.array(point_cur, dtype=float).reshape(3)
        if self.point_prev[2] <= 0 or self.point_cur[2] <= 0:
            raise GeometryError(
                f'{type(self).__qualname__}: both points need positive depth')
        self.flow = self.point_cur - self.point_prev
        self.pixel_cur = None if pixel_cur is None else np.array(pixel_cur,
                dtype=float).reshape(2)

    def __repr__(self):
        return (f'{type(self).__qualname__}(prev={np.round(self.point_prev, 4).tolist()}, '
                f'flow={np.round(self.flow, 4).tolist()})')

def cyclic_filter(matches, epipolar_tol, cycle_tol):
    """
    Keep matches whose left/right rows agree within {epipolar_tol} pixels in
    both frames and whose closing match lands within {cycle_tol} pixels of the
    starting feature
    """
    if epipolar_tol <= 0 or cycle_tol <= 0:
        raise GeometryError(
            f'cyclic_filter: tolerances must be > 0, got epipolar_tol='
            f'{epipolar_tol}, cycle_tol={cycle_tol}')
    kept = [m for m in matches if
            m.epipolar_prev <= epipolar_tol and
            m.epipolar_cur <= epipolar_tol and
            m.cycle_residual <= cycle_tol]
    if len(kept) < len(matches):
        logger.debug(f'cyclic_filter: kept {len(kept)} of {len(matches)} matches')
    return kept

def triangulate(px_left, px_right, K):
    """
    3D point in the left camera frame from a rectified left/right pixel pair
    """
    px_left = np.asarray(px_left, dtype=float)
    px_right = np.asarray(px_right, dtype=float)
    disparity = px_left[..., 0] - px_right[..., 0]
    if np.any(~(disparity > 0)):
        raise GeometryError(
            f'triangulate: disparity must be > 0, got {np.min(disparity)}')
    z = K.fx * K.baseline / disparity
    x = (px_left[..., 0] - K.cx) * z / K.fx
    y = (px_left[..., 1] - K.cy) * z / K.fy
    return np.stack([x, y, z], axis=-1)

def _stack(matches, attr):
    return np.array([getattr(m, attr) for m in matches]).reshape(-1, 2)

def _hat(v):
    # (N, 3) -> (N, 3, 3) cross-product matrices
    h = np.zeros(v.shape[:-1] + (3, 3))
    h[..., 0, 1], h[..., 0, 2] = -v[..., 2], v[..., 1]
    h[..., 1, 0], h[..., 1, 2] = v[..., 2], -v[..., 0]
    h[..., 2, 0], h[..., 2, 1] = -v[..., 1], v[..., 0]
    return h

def _proj_jacobian(Y, K):
    # d(u, v) / dY for points Y (N, 3) -> (N, 2, 3)
    x, y, z = Y[:, 0], Y[:, 1], Y[:, 2]
    J = np.zeros((len(Y), 2, 3))
    J[:, 0, 0] = K.fx / z
    J[:, 0, 2] = -K.fx * x / z ** 2
    J[:, 1, 1] = K.fy / z
    J[:, 1, 2] = -K.fy * y / z ** 2
    return J

def _project_pair(Y, K):
    offset = np.array([K.baseline, 0.0, 0.0])
    Yr = Y - offset
    left = np.stack([K.fx * Y[:, 0] / Y[:, 2] + K.cx,
                     K.fy * Y[:, 1] / Y[:, 2] + K.cy], axis=-1)
    right = np.stack([K.fx * Yr[:, 0] / Yr[:, 2] + K.cx,
                      K.fy * Yr[:, 1] / Yr[:, 2] + K.cy], axis=-1)
    return left, right, Yr

def reprojection_residuals(motion, points_prev, left_cur, right_cur, K):
    """
    Per-match 4-vector of reprojection residuals (pixels) of {points_prev}
    moved by {motion} into the current left and right images.  Returns (N, 4).
    """
    Y = motion.apply(points_prev)
    left, right, _ = _project_pair(Y, K)
    return np.concatenate([left - left_cur, right - right_cur], axis=1)

def _gauss_newton(X, lc, rc, K, rot, trans, cfg):
    step = np.inf
    for it in range(cfg.max_iters):
        Y = X @ rot.T + trans
        if np.any(Y[:, 2] <= 0):
            raise NumericalError(
                f'estimate_egomotion: points moved behind the camera at '
                f'iteration {it}')
        left, right, Yr = _project_pair(Y, K)
        res = np.concatenate([left - lc, right - rc], axis=1).reshape(-1)

        # dY / d(omega, tau) for the left perturbation Y' = exp(omega) Y + tau
        JY = np.concatenate([-_hat(Y), np.broadcast_to(np.eye(3), Y.shape + (3,))],
                axis=2)
        Jl = _proj_jacobian(Y, K) @ JY
        Jr = _proj_jacobian(Yr, K) @ JY
        J = np.concatenate([Jl, Jr], axis=1).reshape(-1, 6)

        H = J.T @ J
        if np.linalg.cond(H) > 1e14:
            raise NumericalError(
                f'estimate_egomotion: normal equations are singular '
                f'(degenerate match geometry)')
        delta = -np.linalg.solve(H, J.T @ res)
        drot = Rotation.from_rotvec(delta[:3]).as_matrix()
        rot = drot @ rot
        trans = drot @ trans + delta[3:]
        step = float(np.linalg.norm(delta))
        if step < cfg.step_tol:
            return rot, trans, it + 1
    if step > 1e-6:
        raise NumericalError(
            f'estimate_egomotion: no convergence after {cfg.max_iters} '
            f'iterations (last step {step:.3g})')
    return rot, trans, cfg.max_iters

def _check_degenerate(X):
    if len(X) < 3:
        raise NumericalError(
            f'estimate_egomotion: need at least 3 triangulable matches, got '
            f'{len(X)}')
    s = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-9 * s[0]:
        raise NumericalError(
            f'estimate_egomotion: triangulated points are collinear')

def estimate_egomotion(matches, K, init=None, cfg=None):
    """
    Rigid motion taking frame t-1 camera coordinates to frame t camera
    coordinates, minimizing the squared reprojection error of the frame t-1
    triangulated points in both frame-t images.  Gauss-Newton over a
    6-parameter (axis-angle increment, translation) update, followed by one
    refinement after discarding matches whose residual norm exceeds
    cfg.robust_scale times the median (but never below cfg.robust_floor).

    Raises NumericalError on degenerate geometry or non-convergence.
    """
    cfg = cfg or FlowConfig()
    init = init or RigidMotion.identity()
    if len(matches) == 0:
        raise NumericalError(f'estimate_egomotion: no matches')
    lp, rp = _stack(matches, 'left_prev'), _stack(matches, 'right_prev')
    lc, rc = _stack(matches, 'left_cur'), _stack(matches, 'right_cur')
    ok = lp[:, 0] - rp[:, 0] > 0
    lp, rp, lc, rc = lp[ok], rp[ok], lc[ok], rc[ok]
    X = triangulate(lp, rp, K) if len(lp) else np.zeros((0, 3))
    _check_degenerate(X)

    rot, trans, iters = _gauss_newton(X, lc, rc, K, init.rotation.copy(),
            init.translation.copy(), cfg)
    motion = RigidMotion(rot, trans, check=False)

    res = np.linalg.norm(reprojection_residuals(motion, X, lc, rc, K), axis=1)
    thresh = max(cfg.robust_scale * float(np.median(res)), cfg.robust_floor)
    inl = res <= thresh
    if inl.sum() < len(res):
        try:
            _check_degenerate(X[inl])
            rot, trans, iters = _gauss_newton(X[inl], lc[inl], rc[inl], K, rot,
                    trans, cfg)
            motion = RigidMotion(rot, trans, check=False)
        except NumericalError as ex:
            logger.warning(f'estimate_egomotion: robust refinement skipped: {ex.msg}')
        logger.debug(f'estimate_egomotion: {inl.sum()} of {len(res)} inliers, '
                f'threshold {thresh:.3f} px')
    return motion

def compute_scene_flow(matches, K):
    """
    Triangulate each match in both frames.  Returns (flows, dropped) where
    {dropped} counts matches with non-positive disparity in either frame.
    """
    flows = []
    dropped = 0
    for m in matches:
        if (m.left_prev[0] - m.right_prev[0] <= 0 or
                m.left_cur[0] - m.right_cur[0] <= 0):
            dropped += 1
            continue
        prev = triangulate(m.left_prev, m.right_prev, K)
        cur = triangulate(m.left_cur, m.right_cur, K)
        flows.append(SceneFlowVector(prev, cur, m.left_cur))
    if dropped:
        logger.debug(f'compute_scene_flow: dropped {dropped} non-triangulable '
                f'matches')
    return flows, dropped

# one frame of the flow stage: egomotion from the previous frame and scene flow
FlowFrame = namedtuple('FlowFrame', ['frame', 'ego', 'flows', 'dropped'])

def frame_flow(frame, matches, K, cfg=None, init=None):
    """
    The flow stage for one frame: cyclic filtering, egomotion and scene flow.
    Frame 0 and frames whose egomotion cannot be estimated get identity
    egomotion with ego.ok False (frame 0 is ok by definition).
    """
    cfg = cfg or FlowConfig()
    if frame == 0:
        return FlowFrame(0, EgoEstimate(RigidMotion.identity(), True), [], 0)
    kept = cyclic_filter(matches, cfg.epipolar_tol, cfg.cycle_tol)
    try:
        ego = EgoEstimate(estimate_egomotion(kept, K, init, cfg), True)
    except NumericalError as ex:
        logger.warning(f'frame {frame}: egomotion failed, using identity: {ex.msg}')
        ego = EgoEstimate(RigidMotion.identity(), False)
    flows, dropped = compute_scene_flow(kept, K)
    return FlowFrame(frame, ego, flows, dropped + len(matches) - len(kept))
