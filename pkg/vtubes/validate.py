import logging
import os
from . import base, fileio
from .error import DataError

"""
Dataset validation: every file of a dataset directory parses, agrees with
the calibration and, when a manifest is present, matches its recorded hash.
"""

logger = logging.getLogger(__name__)

class ValidationReport(object):
    def __init__(self, dataset_dir):
        self.dataset_dir = dataset_dir
        self.problems = []
        self.num_frames = 0
        self.num_matches = 0
        self.num_proposals = 0

    def __repr__(self):
        return (f'{type(self).__qualname__}(frames={self.num_frames}, '
                f'problems={len(self.problems)})')

    @property
    def ok(self):
        return len(self.problems) == 0

    def add(self, msg):
        logger.debug(f'validate: {msg}')
        self.problems.append(msg)

    def summary(self):
        head = (f'{self.dataset_dir}: {self.num_frames} frames, '
                f'{self.num_matches} matches, {self.num_proposals} proposals')
        if self.ok:
            return head + '\nOK'
        return '\n'.join([head] + self.problems)

def _check_manifest(report, dataset_dir):
    path = os.path.join(dataset_dir, fileio.MANIFEST)
    if not os.path.exists(path):
        return
    doc = fileio.read_json(path)
    for rel, digest in sorted(doc.get('outputs', {}).items()):
        full = os.path.join(dataset_dir, rel)
        if not os.path.exists(full):
            report.add(f'{rel}: listed in the manifest but missing')
        elif base.sha256_file(full) != digest:
            report.add(f'{rel}: content differs from the manifest hash')

def validate_dataset(dataset_dir, progress=None):
    """
    Check a dataset directory.  Returns a ValidationReport; problems are
    collected rather than raised, so one run lists all of them.
    """
    report = ValidationReport(dataset_dir)
    join = lambda name: os.path.join(dataset_dir, name)
    try:
        K = fileio.read_calib(join(fileio.CALIB))
        n = fileio.count_depth_frames(dataset_dir)
    except DataError as ex:
        report.add(ex.msg)
        return report
    report.num_frames = n

    for t in range(n):
        try:
            fileio.read_depth(fileio.depth_path(dataset_dir, t)).check_camera(K)
        except DataError as ex:
            report.add(ex.msg)
        if progress is not None:
            progress(t)

    try:
        for t, matches in fileio.iter_match_frames(join(fileio.MATCHES), n):
            if t >= n and matches:
                report.add(f'{fileio.MATCHES}: matches for frame {t} beyond the '
                        f'{n} depth frames')
            if t == 0 and matches:
                report.add(f'{fileio.MATCHES}: frame 0 cannot have matches')
            out = [m for m in matches if not m.in_bounds(K)]
            if out:
                report.add(f'{fileio.MATCHES}: frame {t}: {len(out)} matches lie '
                        f'outside the image')
            report.num_matches += len(matches)
    except DataError as ex:
        report.add(ex.msg)

    try:
        for t, props in fileio.iter_proposal_frames(join(fileio.PROPOSALS), n, K):
            if t >= n and props:
                report.add(f'{fileio.PROPOSALS}: proposals for frame {t} beyond '
                        f'the {n} depth frames')
            report.num_proposals += len(props)
    except DataError as ex:
        report.add(ex.msg)

    if os.path.exists(join(fileio.GT_TUBES)):
        try:
            for tr in fileio.read_tubes(join(fileio.GT_TUBES)):
                if tr.span[1] is not None and tr.span[1] >= n:
                    report.add(f'{fileio.GT_TUBES}: tube {tr.id} extends past '
                            f'frame {n - 1}')
        except DataError as ex:
            report.add(ex.msg)

    try:
        _check_manifest(report, dataset_dir)
    except DataError as ex:
        report.add(ex.msg)
    return report
