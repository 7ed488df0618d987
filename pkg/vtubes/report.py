import csv
from . import base

"""
Text tables and CSV files for evaluation results.  CSV files are meant for
external plotting; the text form is what the command line prints.
"""

def mot_table(results):
    """
    {results}: dict name -> MotResult.  Returns lines of an aligned table.
    """
    rows = [['', 'MOTA', 'IDS', 'FP', 'misses', 'matches', 'gt']]
    for name, r in results.items():
        rows.append([name, base.fmt_float(r.mota), r.id_switches,
            r.false_positives, r.misses, r.matches, r.total_gt])
    return base.tabulate(rows, '  ', [True] + [False] * 6)

def recall_table(curves):
    """
    {curves}: dict name -> [(k, recall)], all over the same budgets
    """
    names = list(curves)
    if not names:
        return []
    budgets = [k for k, _ in curves[names[0]]]
    rows = [['k'] + names]
    for i, k in enumerate(budgets):
        rows.append([k] + [base.fmt_float(curves[n][i][1], 3) for n in names])
    return base.tabulate(rows, '  ', False)

def loc_table(bins):
    rows = [['distance', 'n', 'recall', 'error (m)']]
    for b in bins:
        rows.append([f'{b.lo:g}-{b.hi:g}', b.num_gt, base.fmt_float(b.recall, 3),
            base.fmt_float(b.mean_error, 3)])
    return base.tabulate(rows, '  ', [True, False, False, False])

def write_recall_csv(path, curves):
    names = list(curves)
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['k'] + names)
        if names:
            for i, (k, _) in enumerate(curves[names[0]]):
                w.writerow([k] + [repr(curves[n][i][1]) for n in names])

def write_loc_csv(path, bins):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['lo', 'hi', 'num_gt', 'recall', 'mean_error'])
        for b in bins:
            w.writerow([b.lo, b.hi, b.num_gt, repr(b.recall),
                '' if b.mean_error is None else repr(b.mean_error)])

def write_mot_log_csv(path, mot):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['frame', 'matches', 'misses', 'false_positives',
            'id_switches', 'pairs'])
        for rec in mot.assignments:
            pairs = ' '.join(f'{g}:{p}' for g, p, _ in rec['pairs'])
            w.writerow([rec['frame'], len(rec['pairs']), rec['misses'],
                rec['false_positives'], rec['id_switches'], pairs])

def tube_table(tracks, limit=20):
    """
    The top {limit} tracks by total score
    """
    order = sorted(tracks, key=lambda tr: (-tr.scores.get('total', 0.0), tr.id))
    rows = [['id', 'span', 'frames', 'total', 'motion', 'mask', 'objectness',
        'sel', 'flags']]
    for tr in order[:limit]:
        s = tr.scores
        n, m = tr.span
        rows.append([tr.id, f'{n}-{m}', len(tr.inlier_frames),
            base.fmt_float(s.get('total'), 2), base.fmt_float(s.get('motion'), 2),
            base.fmt_float(s.get('mask'), 2),
            base.fmt_float(s.get('objectness'), 2), 'y' if tr.selected else '',
            base.TubeFlag.codestring(tr.flags)])
    return base.tabulate(rows, '  ', [False, True] + [False] * 6 + [True])
