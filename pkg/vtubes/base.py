import enum
import hashlib
import json
import numpy as np

"""
Small helpers shared across vtubes: flag codes, text tables, canonical JSON
and content hashing.
"""

class TubeFlag(enum.Enum):
    EGO_FALLBACK = 1       # a frame of the tube used identity egomotion
    NO_FLOW = 2            # the seed proposal had no scene flow under its mask
    BUDGET_EXHAUSTED = 4   # co-selection returned its incumbent early

    @classmethod
    def codestring(cls, code):
        codes = []
        for opt in cls:
            if opt.value & code:
                codes.append(opt.name)
        return '|'.join(codes)

    @classmethod
    def from_codestring(cls, codestring):
        code = 0
        for name in filter(None, codestring.split('|')):
            code |= cls[name].value
        return code

def grammar_list(items):
    # generate a grammatically correct English list
    items = [str(i) for i in items]
    if len(items) == 0:
        return None
    elif len(items) < 3:
        return ' and '.join(items)
    else:
        return ', '.join(items[:-1]) + ' and ' + items[-1]

def tabulate(rows, sep, left_align=True):
    """
    {rows} is a list of rows, where each row is a list of arbitrary items

    Returns a list of lines, one per row, such that each item is
    column-aligned, using {sep} as a field separator.  Rows may have
    different numbers of items; the longest row defines the number of
    columns.
    """
    def get(items, i):
        try:
            return items[i]
        except IndexError:
            return ''

    if len(rows) == 0:
        return []
    ncols = max(len(row) for row in rows)
    if isinstance(left_align, bool):
        left_align = [left_align] * ncols

    w = [max(len(str(get(row, c))) for row in rows) for c in range(ncols)]
    lines = []
    for row in rows:
        fields = []
        for c in range(ncols):
            align = '<' if left_align[c] else '>'
            fields.append(f'{str(get(row, c)):{align}{w[c]}s}')
        lines.append(sep.join(fields).rstrip())
    return lines

def fmt_float(val, digits=4):
    if val is None:
        return '-'
    return f'{val:.{digits}f}'

def to_jsonable(obj):
    """
    Convert numpy scalars and arrays (possibly nested in dicts, lists and
    tuples) into plain Python values
    """
    if isinstance(obj, dict):
        return { str(k): to_jsonable(v) for k, v in obj.items() }
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj

def canonical_json(obj, indent=None):
    """
    JSON text with sorted keys, so identical content yields identical bytes
    """
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=indent,
            allow_nan=True)

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b''):
            h.update(chunk)
    return h.hexdigest()

