import logging
import os
import numpy as np
from .coselect import SelectionProblem, batch_problems, solve_batches
from .evaluate import TubeTrack, clear_mot
from .scoring import score_tubes
from . import fileio

"""
Random search over the scoring and co-selection hyperparameters on held-out
validation scenes, maximizing mean MOTA.

Tubes are enumerated once per scene with the base config; each candidate
only rescores them and reruns co-selection, reusing the overlap penalties.
The base config is always the first candidate, so the result never scores
below it.
"""

logger = logging.getLogger(__name__)

# (low, high, log scale) of each searched parameter
SEARCH_SPACE = {
        'scoring': {
            'w1': (0.0, 2.0, False),
            'w2': (0.0, 2.0, False),
            'w3': (0.0, 2.0, False),
            'alpha': (2.0, 100.0, True),
            'beta': (2.0, 100.0, True),
            },
        'select': {
            'eps1': (0.0, 200.0, False),
            'eps2': (1.0, 100.0, True),
            },
        }

class ValidationScene(object):
    """
    One scene's enumerated tubes, their batch overlap penalties and ground
    truth, prepared once for all candidates
    """
    def __init__(self, name, tubes, gt_tubes, cfg):
        self.name = name
        self.tubes = tubes
        self.gt_tubes = gt_tubes
        score_tubes(tubes, cfg.scoring)
        sel = cfg.select
        self.batches = list(batch_problems(tubes, sel.eps1, sel.eps2, sel.batch_len))

    def __repr__(self):
        return (f'{type(self).__qualname__}({self.name}, tubes={len(self.tubes)}, '
                f'gt={len(self.gt_tubes)})')

    def evaluate(self, cfg):
        score_tubes(self.tubes, cfg.scoring)
        sel = cfg.select
        batches = []
        for span, batch, problem in self.batches:
            theta = [t.scores['total'] for t in batch]
            batches.append((span, batch, SelectionProblem(theta, problem.pairwise,
                sel.eps1, sel.eps2, span, problem.tube_ids)))
        kept = solve_batches(self.tubes, batches, sel.node_budget)
        tracks = [TubeTrack.from_tube(t) for t in kept]
        return clear_mot(self.gt_tubes, tracks)

def sample_config(base_cfg, rng):
    updates = {}
    for group, params in SEARCH_SPACE.items():
        updates[group] = {}
        for name, (lo, hi, log) in params.items():
            if log:
                val = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            else:
                val = float(rng.uniform(lo, hi))
            updates[group][name] = val
    # at least one positive weight
    if sum(updates['scoring'][w] for w in ('w1', 'w2', 'w3')) == 0:
        updates['scoring']['w3'] = 1.0
    return base_cfg.replace(**updates)

def tune(scenes, budget, base_cfg, seed=0, progress=None):
    """
    Evaluate {budget} candidates (the base config first, then random draws)
    on {scenes} and return (best config, history).  history holds
    (candidate number, mean MOTA, config) per candidate.  Ties keep the
    earlier candidate.
    """
    rng = np.random.default_rng(seed)
    best_cfg, best_mota = None, -np.inf
    history = []
    for i in range(max(int(budget), 1)):
        cfg = base_cfg if i == 0 else sample_config(base_cfg, rng)
        motas = [s.evaluate(cfg).mota for s in scenes]
        mota = float(np.nanmean(motas)) if motas else float('nan')
        history.append((i, mota, cfg))
        if mota > best_mota:
            best_cfg, best_mota = cfg, mota
        if progress is not None:
            progress(i, mota, best_mota)
    if best_cfg is None:
        best_cfg = base_cfg
    logger.info(f'tune: best mean MOTA {best_mota:.4f} over {len(history)} '
            f'candidates')
    return best_cfg, history

def scene_dirs(dataset_dir):
    """
    The dataset directory itself when it holds a dataset, else its
    subdirectories that do, sorted by name
    """
    if os.path.exists(os.path.join(dataset_dir, fileio.CALIB)):
        return [dataset_dir]
    if not os.path.isdir(dataset_dir):
        return []
    subs = sorted(os.path.join(dataset_dir, d) for d in os.listdir(dataset_dir))
    return [d for d in subs if os.path.exists(os.path.join(d, fileio.CALIB))]
