import logging
from collections import namedtuple
import numpy as np
from scipy.optimize import linear_sum_assignment
from .error import DataError, UsageError
from .mask import BitMask, mask_iou, box_iou

"""
Evaluation of tube sets against ground truth: CLEAR-MOT (MOTA and identity
switches), recall against the proposal budget, 3D localization error against
distance and average precision of a tube ranking.
"""

logger = logging.getLogger(__name__)

DEFAULT_BUDGETS = (1, 2, 5, 10, 20, 50, 100, 200, 500)
DEFAULT_BINS = (0.0, 10.0, 20.0, 30.0, 40.0, 60.0, 80.0)

class TubeTrack(object):
    """
    The evaluation view of a tube: per-frame masks and optional 3D positions.
    Ground-truth tubes and pipeline output both load into this form.
    """
    def __init__(self, track_id, masks, positions=None, scores=None,
            selected=True, flags=0, known=True, category=None):
        self.id = track_id
        self.masks = dict(masks)
        self.positions = dict(positions or {})
        self.scores = dict(scores or {})
        self.selected = selected
        self.flags = flags
        self.known = known
        self.category = category

    def __repr__(self):
        n, m = self.span
        return (f'{type(self).__qualname__}(id={self.id}, span=[{n}, {m}], '
                f'frames={len(self.masks)})')

    @property
    def inlier_frames(self):
        return sorted(self.masks)

    @property
    def span(self):
        frames = self.inlier_frames
        if not frames:
            return None, None
        return frames[0], frames[-1]

    def mask_at(self, t):
        return self.masks.get(t)

    def position_at(self, t):
        return self.positions.get(t)

    @classmethod
    def from_tube(cls, tube, fill_gaps=True):
        """
        The track of {tube}.  With {fill_gaps}, interior misses carry the
        tube's predicted mask and position, otherwise only inlier frames are
        kept.
        """
        if fill_gaps:
            filled = tube.filled_frames()
            masks = { t: m for t, (m, _) in filled.items() }
            positions = { t: p for t, (_, p) in filled.items() }
        else:
            masks = { t: tube.mask_at(t) for t in tube.inlier_frames }
            positions = { t: tube.position_at(t) for t in tube.inlier_frames }
        selected = True if tube.selected is None else tube.selected
        return cls(tube.id, masks, positions, tube.scores, selected, tube.flags)

    def to_dict(self):
        frames = []
        for t in self.inlier_frames:
            pos = self.positions.get(t)
            frames.append({ 'frame': t, 'rle': self.masks[t].to_rle(),
                'position': None if pos is None else np.asarray(pos).tolist() })
        return { 'id': self.id, 'known': self.known, 'category': self.category,
                'selected': self.selected, 'flags': self.flags,
                'scores': self.scores, 'frames': frames }

    @classmethod
    def from_dict(cls, d, width, height):
        try:
            masks, positions = {}, {}
            for f in d['frames']:
                t = int(f['frame'])
                masks[t] = BitMask.from_rle(f['rle'], width, height)
                if f.get('position') is not None:
                    positions[t] = np.asarray(f['position'], dtype=float)
            return cls(d['id'], masks, positions, d.get('scores'),
                    d.get('selected', True), d.get('flags', 0),
                    d.get('known', True), d.get('category'))
        except KeyError as ex:
            raise DataError(f'{cls.__qualname__}: missing field {ex}')

def temporal_iou(a, b):
    """
    Spatio-temporal IoU: summed per-frame intersections over summed per-frame
    unions, over the frames of either track
    """
    inter = union = 0
    for t in set(a.inlier_frames) | set(b.inlier_frames):
        ma, mb = a.mask_at(t), b.mask_at(t)
        if ma is None or mb is None:
            union += (ma or mb).area
            continue
        i = int(np.count_nonzero(ma.bits & mb.bits))
        inter += i
        union += ma.area + mb.area - i
    return inter / union if union else 0.0

class MotResult(object):
    """
    CLEAR-MOT counts.  {assignments} holds one dict per frame with the
    matched (gt id, pred id, iou) triples and the per-frame counts.
    """
    def __init__(self, matches, misses, false_positives, id_switches,
            total_gt, assignments):
        self.matches = matches
        self.misses = misses
        self.false_positives = false_positives
        self.id_switches = id_switches
        self.total_gt = total_gt
        self.assignments = assignments

    def __repr__(self):
        return (f'{type(self).__qualname__}(mota={self.mota:.4f}, '
                f'ids={self.id_switches}, fp={self.false_positives}, '
                f'misses={self.misses}, matches={self.matches})')

    @property
    def mota(self):
        if self.total_gt == 0:
            return float('nan')
        errors = self.misses + self.false_positives + self.id_switches
        return 1.0 - errors / self.total_gt

    def matched_pairs(self):
        """
        Yields (frame, gt id, pred id) for every match
        """
        for rec in self.assignments:
            for gid, pid, _ in rec['pairs']:
                yield rec['frame'], gid, pid

    def to_dict(self):
        return { 'mota': self.mota, 'id_switches': self.id_switches,
                'false_positives': self.false_positives, 'misses': self.misses,
                'matches': self.matches, 'total_gt': self.total_gt }

def optimal_assignment(iou, threshold):
    """
    Maximum total IoU one-to-one assignment between rows and columns of
    {iou}, restricted to pairs with iou >= threshold.  Returns (row, col)
    pairs sorted by row.
    """
    iou = np.asarray(iou, dtype=float)
    if iou.size == 0:
        return []
    allowed = iou >= threshold
    if not allowed.any():
        return []
    cost = np.where(allowed, -iou, 0.0)
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]

def _frames_of(tracks):
    frames = set()
    for tr in tracks:
        frames.update(tr.inlier_frames)
    return frames

def clear_mot(gt_tubes, pred_tubes, iou_threshold=0.5, use_box=False):
    """
    CLEAR-MOT matching per frame: correspondences from earlier frames are kept
    while their IoU stays at or above {iou_threshold}; the remaining objects
    and predictions are assigned to maximize the total IoU.  A ground-truth
    object matched to a different prediction than at its previous match
    counts one identity switch.  {use_box} compares bounding boxes instead of
    masks.
    """
    overlap = box_iou if use_box else mask_iou
    last = {}
    matches = misses = fps = switches = total = 0
    log = []
    for t in sorted(_frames_of(gt_tubes) | _frames_of(pred_tubes)):
        gts = [g for g in gt_tubes if g.mask_at(t) is not None]
        preds = [p for p in pred_tubes if p.mask_at(t) is not None]
        iou = np.array([[overlap(g.mask_at(t), p.mask_at(t)) for p in preds]
            for g in gts]).reshape(len(gts), len(preds))
        pidx = { p.id: j for j, p in enumerate(preds) }

        pairs = []
        used_g, used_p = set(), set()
        for i, g in enumerate(gts):
            j = pidx.get(last.get(g.id))
            if j is not None and j not in used_p and iou[i, j] >= iou_threshold:
                pairs.append((i, j))
                used_g.add(i)
                used_p.add(j)
        free_g = [i for i in range(len(gts)) if i not in used_g]
        free_p = [j for j in range(len(preds)) if j not in used_p]
        sub = iou[np.ix_(free_g, free_p)]
        for r, c in optimal_assignment(sub, iou_threshold):
            pairs.append((free_g[r], free_p[c]))

        frame_switches = 0
        for i, j in pairs:
            gid, pid = gts[i].id, preds[j].id
            if gid in last and last[gid] != pid:
                frame_switches += 1
            last[gid] = pid
        n_match = len(pairs)
        matches += n_match
        misses += len(gts) - n_match
        fps += len(preds) - n_match
        switches += frame_switches
        total += len(gts)
        log.append({ 'frame': t,
            'pairs': sorted((gts[i].id, preds[j].id, float(iou[i, j]))
                for i, j in pairs),
            'misses': len(gts) - n_match, 'false_positives': len(preds) - n_match,
            'id_switches': frame_switches })
    result = MotResult(matches, misses, fps, switches, total, log)
    logger.debug(f'clear_mot: {result}')
    return result

def image_candidates(proposal_frames):
    """
    {frame: [(score, mask), ...]} from an iterable of per-frame FrameProposal
    lists
    """
    cands = {}
    for props in proposal_frames:
        for p in props:
            cands.setdefault(p.frame, []).append((p.objectness, p.mask))
    return cands

def track_score(track, key='total'):
    """
    A named score of a track.  '+'-joined keys sum their components, so
    'mask+motion' ranks by consistency cues alone.
    """
    try:
        return float(sum(track.scores[k] for k in key.split('+')))
    except KeyError as ex:
        raise UsageError(f'track {track.id} has no score {ex}')

def _recalled_image(cands, gt_tubes, k, iou_threshold):
    hit = total = 0
    for g in gt_tubes:
        for t in g.inlier_frames:
            total += 1
            ranked = sorted(cands.get(t, []), key=lambda c: -c[0])[:k]
            if any(mask_iou(g.mask_at(t), m) > iou_threshold for _, m in ranked):
                hit += 1
    return hit, total

def _recalled_tube(tracks, gt_tubes, k, iou_threshold, key):
    order = sorted(tracks, key=lambda tr: (-track_score(tr, key), tr.id))[:k]
    hit = total = 0
    for g in gt_tubes:
        for t in g.inlier_frames:
            total += 1
            gm = g.mask_at(t)
            if any(tr.mask_at(t) is not None and
                    mask_iou(gm, tr.mask_at(t)) > iou_threshold for tr in order):
                hit += 1
    return hit, total

def recall_curve(candidates, gt_tubes, iou_threshold=0.5, budgets=DEFAULT_BUDGETS,
        key='total'):
    """
    Recall of ground-truth object instances (object, frame) against a
    candidate budget.  {candidates} is either {frame: [(score, mask)]} for
    image-level proposals, where the top-k per frame are kept, or a list of
    tracks, where the top-k tubes of the sequence by score {key} are kept.
    An instance is recalled when a kept candidate has IoU > {iou_threshold}
    with it.  Returns a list of (k, recall).
    """
    curve = []
    for k in sorted(int(b) for b in budgets):
        if isinstance(candidates, dict):
            hit, total = _recalled_image(candidates, gt_tubes, k, iou_threshold)
        else:
            hit, total = _recalled_tube(candidates, gt_tubes, k, iou_threshold, key)
        curve.append((k, hit / total if total else float('nan')))
    return curve

LocBin = namedtuple('LocBin', ['lo', 'hi', 'num_gt', 'recall', 'mean_error'])

def loc_error_by_distance(gt_tubes, pred_tubes, bins=DEFAULT_BINS, mot=None,
        iou_threshold=0.5):
    """
    Bucket ground-truth instances by camera distance ||position|| using bin
    edges {bins}.  Per bin: the fraction of instances matched by CLEAR-MOT
    and the mean Euclidean error of matched predictions that carry a
    position (None if none do).  Bins without instances are omitted.
    """
    mot = mot or clear_mot(gt_tubes, pred_tubes, iou_threshold)
    gt_by_id = { g.id: g for g in gt_tubes }
    pred_by_id = { p.id: p for p in pred_tubes }
    matched = { (t, gid): pid for t, gid, pid in mot.matched_pairs() }
    edges = np.asarray(bins, dtype=float)
    nb = len(edges) - 1
    counts = np.zeros(nb, dtype=int)
    hits = np.zeros(nb, dtype=int)
    errors = [[] for _ in range(nb)]
    for g in gt_by_id.values():
        for t in g.inlier_frames:
            pos = g.position_at(t)
            if pos is None:
                continue
            b = int(np.searchsorted(edges, np.linalg.norm(pos), side='right')) - 1
            if not (0 <= b < nb):
                continue
            counts[b] += 1
            pid = matched.get((t, g.id))
            if pid is None:
                continue
            hits[b] += 1
            est = pred_by_id[pid].position_at(t)
            if est is not None:
                errors[b].append(float(np.linalg.norm(np.asarray(est) - pos)))
    out = []
    for b in range(nb):
        if counts[b] == 0:
            continue
        err = float(np.mean(errors[b])) if errors[b] else None
        out.append(LocBin(float(edges[b]), float(edges[b + 1]), int(counts[b]),
            hits[b] / counts[b], err))
    return out

def rank_average_precision(tracks, gt_tubes, key='total', iou_threshold=0.5):
    """
    Average precision of ranking {tracks} by score {key}.  A track is a true
    positive when its temporal IoU with a not yet claimed ground-truth tube
    reaches {iou_threshold}.
    """
    if not gt_tubes:
        return float('nan')
    order = sorted(tracks, key=lambda tr: (-track_score(tr, key), tr.id))
    claimed = set()
    tp = 0
    precisions = []
    for rank, tr in enumerate(order, 1):
        best, best_iou = None, iou_threshold
        for g in gt_tubes:
            if g.id in claimed:
                continue
            v = temporal_iou(tr, g)
            if v >= best_iou:
                best, best_iou = g.id, v
        if best is not None:
            claimed.add(best)
            tp += 1
            precisions.append(tp / rank)
    return float(np.sum(precisions) / len(gt_tubes))
