import logging
from collections import deque, namedtuple
import numpy as np
from .base import TubeFlag
from .config import TrackingConfig
from .error import DataError
from .geometry import RigidMotion, warp_mask
from .kalman import (initiate, kf_predict, kf_update,
        position_prediction, mahalanobis_sq, time_reversed)
from .mask import mask_iou
from .sceneflow import EgoEstimate

"""
Tube enumeration: constant-velocity Kalman filtering, 3D gating, joint
mask/position association and forward-backward extension over a sliding
window.

For each incoming frame t the enumerator
  1. extends every live tube: predict, warp its last mask into frame t, gate
     the frame's proposals on 3D position and pick the one maximizing
     IoU(predicted mask, mask) * exp(-d^2 / 2).  Contested proposals go to
     the highest joint value; the losers fall back to their next best.
  2. seeds a new tube from every proposal no live tube took, extends it
     backward over the previous {window} frames with the time-reversed
     motion model, and keeps it live for forward extension.

Tubes die after more than max_misses consecutive misses; tubes with fewer
than min_length inliers are discarded.  Tubes may overlap each other.
"""

logger = logging.getLogger(__name__)

# ego maps the previous frame's camera coordinates into this frame's
FrameContext = namedtuple('FrameContext', ['frame', 'proposals', 'depth', 'ego'])

class TubeFrame(object):
    """
    The record of one tube at one frame.  {proposal} is None for a miss.
    pred_* hold the prediction the frame was gated and scored against; they
    are None at the seed frame.
    """
    __slots__ = ('frame', 'proposal', 'state', 'pred_state', 'pred_pos',
            'pred_cov', 'pred_mask')

    def __init__(self, frame, proposal, state, pred_state=None, pred_pos=None,
            pred_cov=None, pred_mask=None):
        self.frame = frame
        self.proposal = proposal
        self.state = state
        self.pred_state = pred_state
        self.pred_pos = pred_pos
        self.pred_cov = pred_cov
        self.pred_mask = pred_mask

    def __repr__(self):
        kind = 'miss' if self.proposal is None else f'#{self.proposal.index}'
        return f'{type(self).__qualname__}({self.frame}: {kind})'

    @property
    def is_inlier(self):
        return self.proposal is not None

    @property
    def has_prediction(self):
        return self.pred_pos is not None

class Tube(object):
    def __init__(self, tube_id):
        self.id = tube_id
        self.frames = {}         # frame -> TubeFrame
        self.flags = 0
        self.scores = {}
        self.selected = None

        # forward filtering state while live
        self.state = None        # KalmanState at the last processed frame
        self.pending = None      # predicted KalmanState for the frame being extended
        self.misses = 0
        self.carry = None        # (mask, depth, accumulated motion) to warp from

    def __repr__(self):
        n, m = self.span
        return (f'{type(self).__qualname__}(id={self.id}, span=[{n}, {m}], '
                f'inliers={self.num_inliers}, flags={TubeFlag.codestring(self.flags)})')

    @property
    def span(self):
        frames = self.inlier_frames
        if len(frames) == 0:
            return None, None
        return frames[0], frames[-1]

    @property
    def inlier_frames(self):
        return sorted(t for t, tf in self.frames.items() if tf.is_inlier)

    @property
    def num_inliers(self):
        return sum(1 for tf in self.frames.values() if tf.is_inlier)

    @property
    def inliers(self):
        return { t: self.frames[t].proposal for t in self.inlier_frames }

    @property
    def state_history(self):
        return { t: self.frames[t].state for t in sorted(self.frames) }

    @property
    def predicted_masks(self):
        return { t: tf.pred_mask for t, tf in sorted(self.frames.items())
                if tf.pred_mask is not None }

    def mask_at(self, t):
        tf = self.frames.get(t)
        if tf is None or tf.proposal is None:
            return None
        return tf.proposal.mask

    def position_at(self, t):
        tf = self.frames.get(t)
        if tf is None or tf.proposal is None:
            return None
        return tf.state.position

    def filled_frames(self):
        """
        {frame: (mask, position)} over the whole span.  Interior misses take
        the predicted mask, or the last earlier mask when none was predicted,
        and the predicted position.
        """
        n, m = self.span
        out = {}
        if n is None:
            return out
        mask = None
        for t in range(n, m + 1):
            tf = self.frames.get(t)
            if tf is None:
                continue
            if tf.proposal is not None:
                mask = tf.proposal.mask
            elif tf.pred_mask is not None and not tf.pred_mask.is_empty():
                mask = tf.pred_mask
            out[t] = (mask, tf.state.position)
        return out

    def max_gap(self):
        frames = self.inlier_frames
        if len(frames) < 2:
            return 0
        return int(np.max(np.diff(frames)) - 1)

    def add_flag(self, flag):
        self.flags |= flag.value

    def has_flag(self, flag):
        return bool(self.flags & flag.value)

    def trim(self):
        """
        Drop miss frames before the first and after the last inlier
        """
        n, m = self.span
        if n is None:
            self.frames = {}
        else:
            self.frames = { t: tf for t, tf in self.frames.items() if n <= t <= m }

def _positions(candidates):
    return np.array([c.position for c in candidates]).reshape(-1, 3)

def _gate_dist(pred_pos, pred_cov, candidates, gate_threshold):
    if len(candidates) == 0:
        return [], np.zeros(0)
    d2 = mahalanobis_sq(_positions(candidates), pred_pos, pred_cov)
    keep = np.flatnonzero(d2 <= gate_threshold)
    return [candidates[i] for i in keep], d2[keep]

def gate(predicted, candidates, gate_threshold, cfg=None):
    """
    Keep the candidates whose squared Mahalanobis distance under the
    position marginal of {predicted} is at most {gate_threshold}
    """
    cfg = cfg or TrackingConfig()
    pos, cov = position_prediction(predicted, cfg)
    gated, _ = _gate_dist(pos, cov, [c for c in candidates if c.valid_3d],
            gate_threshold)
    return gated

def joint_values(pred_pos, pred_cov, candidates, predicted_mask):
    """
    IoU(predicted_mask, mask) * exp(-d^2 / 2) for each candidate
    """
    if len(candidates) == 0:
        return np.zeros(0)
    d2 = mahalanobis_sq(_positions(candidates), pred_pos, pred_cov)
    iou = np.array([mask_iou(predicted_mask, c.mask) for c in candidates])
    return iou * np.exp(-0.5 * d2)

def _rank_key(joint, prop):
    return (-joint, -prop.objectness, prop.index)

def _best(candidates, joint, assoc_min):
    ranked = sorted((_rank_key(j, c), c) for j, c in zip(joint, candidates)
            if j >= assoc_min)
    return ranked[0][1] if ranked else None

def associate(tube, gated, predicted_mask, cfg=None):
    """
    The gated candidate maximizing the joint association value against the
    tube's pending prediction, or None when no candidate reaches
    cfg.assoc_min.  Ties go to higher objectness, then lower proposal index.
    """
    cfg = cfg or TrackingConfig()
    if len(gated) == 0:
        return None
    pos, cov = position_prediction(tube.pending, cfg)
    joint = joint_values(pos, cov, gated, predicted_mask)
    return _best(gated, joint, cfg.assoc_min)

def _ego_estimate(ego):
    if ego is None:
        return EgoEstimate(RigidMotion.identity(), True)
    if isinstance(ego, EgoEstimate):
        return ego
    return EgoEstimate(ego, True)

class TubeEnumerator(object):
    """
    Streaming forward-backward tube enumeration.  Feed frames in order with
    push(), then collect the tube proposal set with finish().  Only the last
    {window} frames are retained.  drain() hands out the tubes terminated so
    far, and no tube still to come covers a frame before frontier().
    """
    def __init__(self, K, cfg=None):
        self.K = K
        self.cfg = cfg or TrackingConfig()
        self.history = deque(maxlen=max(self.cfg.window, 1))
        self.live = []
        self.done = []
        self.next_id = 0

    def __repr__(self):
        return (f'{type(self).__qualname__}(live={len(self.live)}, '
                f'done={len(self.done)})')

    def push(self, ctx):
        ctx = ctx._replace(ego=_ego_estimate(ctx.ego))
        prev = self.history[-1] if self.history else None
        if prev is not None and ctx.frame != prev.frame + 1:
            raise DataError(
                f'{type(self).__qualname__}: frames must be consecutive; got '
                f'{ctx.frame} after {prev.frame}')
        taken = set()
        if prev is not None:
            taken = self._extend_live(ctx, prev)
        for prop in ctx.proposals:
            if prop.valid_3d and prop.index not in taken:
                self._seed(prop, ctx)
        # a zero window still keeps the previous frame for forward extension
        self.history.append(ctx)

    def drain(self):
        """
        The tubes terminated since the last call, ordered by id
        """
        tubes = sorted(self.done, key=lambda t: t.id)
        self.done = []
        return tubes

    def frontier(self):
        """
        The first frame a live tube or a tube seeded later may still cover
        """
        if not self.history:
            return 0
        # the next seed reaches back {window} frames before its own
        first = self.history[-1].frame + 1 - self.cfg.window
        for tube in self.live:
            first = min(first, tube.span[0])
        return max(first, 0)

    def finish(self):
        for tube in self.live:
            self._terminate(tube)
        self.live = []
        return self.drain()

    # ---- internals ----
    def _new_tube(self):
        tube = Tube(self.next_id)
        self.next_id += 1
        return tube

    def _warp(self, carry, velocity, ego):
        mask, depth, acc = carry
        obj = RigidMotion.translation_only(velocity)
        return warp_mask(mask, depth, ego, obj.compose(acc), self.K)

    def _advance_carry(self, carry, velocity, ego):
        mask, depth, acc = carry
        obj = RigidMotion.translation_only(velocity)
        return mask, depth, ego.compose(obj).compose(acc)

    def _extend_live(self, ctx, prev):
        cfg = self.cfg
        ego = ctx.ego.motion
        cands = [p for p in ctx.proposals if p.valid_3d]
        requests = []
        pred_masks = {}
        for tube in self.live:
            if not ctx.ego.ok:
                tube.add_flag(TubeFlag.EGO_FALLBACK)
            tube.pending = kf_predict(tube.state, cfg, ego)
            pos, cov = position_prediction(tube.pending, cfg)
            gated, _ = _gate_dist(pos, cov, cands, cfg.gate_threshold)
            if len(gated) == 0:
                continue
            pred_mask = self._warp(tube.carry, tube.state.velocity, ego)
            pred_masks[tube.id] = pred_mask
            joint = joint_values(pos, cov, gated, pred_mask)
            for j, prop in zip(joint, gated):
                if j >= cfg.assoc_min:
                    requests.append((_rank_key(j, prop) + (tube.id,), tube, prop))

        # highest joint value wins a contested proposal
        requests.sort(key=lambda r: r[0])
        winners = {}
        taken = set()
        for _, tube, prop in requests:
            if tube.id in winners or prop.index in taken:
                continue
            winners[tube.id] = prop
            taken.add(prop.index)

        still_live = []
        for tube in self.live:
            pred = tube.pending
            pos, cov = position_prediction(pred, cfg)
            pred_mask = pred_masks.get(tube.id)
            prop = winners.get(tube.id)
            if prop is not None:
                post = kf_update(pred, prop.observation, cfg,
                        position_only=not prop.has_flow)
                tube.frames[ctx.frame] = TubeFrame(ctx.frame, prop, post, pred,
                        pos, cov, pred_mask)
                tube.state = post
                tube.misses = 0
                tube.carry = (prop.mask, ctx.depth, RigidMotion.identity())
            else:
                tube.frames[ctx.frame] = TubeFrame(ctx.frame, None, pred, pred,
                        pos, cov, pred_mask)
                if pred_mask is not None:
                    tube.carry = (pred_mask, ctx.depth, RigidMotion.identity())
                else:
                    tube.carry = self._advance_carry(tube.carry,
                            tube.state.velocity, ego)
                tube.state = pred
                tube.misses += 1
            tube.pending = None
            if tube.misses > cfg.max_misses:
                self._terminate(tube)
            else:
                still_live.append(tube)
        self.live = still_live
        return taken

    def _seed(self, prop, ctx):
        cfg = self.cfg
        tube = self._new_tube()
        state0 = initiate(prop.position, prop.velocity, cfg)
        tube.frames[ctx.frame] = TubeFrame(ctx.frame, prop, state0)
        if not prop.has_flow:
            tube.add_flag(TubeFlag.NO_FLOW)

        # backward pass over the retained window, newest first
        state_b = time_reversed(state0)
        carry = (prop.mask, ctx.depth, RigidMotion.identity())
        misses = 0
        later = ctx
        for past in reversed(list(self.history)[-cfg.window:] if cfg.window else []):
            if not later.ego.ok:
                tube.add_flag(TubeFlag.EGO_FALLBACK)
            ego_back = later.ego.motion.inverse()
            pred_b = kf_predict(state_b, cfg, ego_back)
            pos, cov = position_prediction(pred_b, cfg)
            cands = [p for p in past.proposals if p.valid_3d]
            gated, _ = _gate_dist(pos, cov, cands, cfg.gate_threshold)
            best, pred_mask = None, None
            if len(gated) > 0:
                pred_mask = self._warp(carry, state_b.velocity, ego_back)
                joint = joint_values(pos, cov, gated, pred_mask)
                best = _best(gated, joint, cfg.assoc_min)
            if best is not None:
                obs = np.r_[best.position, -best.velocity]
                post_b = kf_update(pred_b, obs, cfg, position_only=not best.has_flow)
                tube.frames[past.frame] = TubeFrame(past.frame, best,
                        time_reversed(post_b), time_reversed(pred_b), pos, cov,
                        pred_mask)
                state_b = post_b
                carry = (best.mask, past.depth, RigidMotion.identity())
                misses = 0
            else:
                tube.frames[past.frame] = TubeFrame(past.frame, None,
                        time_reversed(pred_b), time_reversed(pred_b), pos, cov,
                        pred_mask)
                if pred_mask is not None:
                    carry = (pred_mask, past.depth, RigidMotion.identity())
                else:
                    carry = self._advance_carry(carry, state_b.velocity, ego_back)
                state_b = pred_b
                misses += 1
                if misses > cfg.max_misses:
                    break
            later = past

        tube.state = state0
        tube.carry = (prop.mask, ctx.depth, RigidMotion.identity())
        tube.misses = 0
        self.live.append(tube)
        return tube

    def _terminate(self, tube):
        tube.trim()
        tube.carry = None
        tube.pending = None
        if tube.num_inliers >= self.cfg.min_length:
            self.done.append(tube)

def enumerate_tubes(proposal_stream, depth_stream, ego_stream, K, cfg=None):
    """
    Run forward-backward enumeration over whole streams.  {ego_stream} yields,
    per frame, the motion from the previous frame's camera into this one
    (RigidMotion or EgoEstimate; frame 0's entry is ignored).  Proposals must
    already be localized.  Returns the tube proposal set ordered by id.
    """
    enum = TubeEnumerator(K, cfg)
    for t, (props, depth, ego) in enumerate(zip(proposal_stream, depth_stream,
            ego_stream)):
        enum.push(FrameContext(t, props, depth, ego))
    return enum.finish()

