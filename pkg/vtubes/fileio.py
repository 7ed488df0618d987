import json
import logging
import os
import struct
import numpy as np
from .base import canonical_json, sha256_file
from .error import DataError, UsageError
from .evaluate import TubeTrack
from .geometry import CameraIntrinsics, DepthMap, RigidMotion
from .mask import BitMask
from .proposals import FrameProposal
from .sceneflow import QuadMatch, SceneFlowVector, EgoEstimate, FlowFrame

"""
On-disk formats.  A dataset directory holds

    calib.json          CameraIntrinsics
    depth/NNNNNN.bin    one depth map per frame (see write_depth)
    matches.jsonl       one QuadMatch per line
    proposals.jsonl     one proposal per line, grouped by nondecreasing frame
    gt_tubes.json       ground-truth tubes (synthetic datasets)
    ego_gt.jsonl        ground-truth egomotion per frame (synthetic datasets)
    scene.json          the SceneConfig that generated it
    manifest.json       config, content hashes and version of the producing run

Pipeline outputs are flow.jsonl (per-frame egomotion and scene flow) and
tubes.json.  JSON is written with sorted keys so equal content gives equal
bytes.
"""

logger = logging.getLogger(__name__)

DEPTH_MAGIC = b'DPTH'
DEPTH_HEADER = struct.Struct('<4sII')

CALIB = 'calib.json'
DEPTH_DIR = 'depth'
MATCHES = 'matches.jsonl'
PROPOSALS = 'proposals.jsonl'
GT_TUBES = 'gt_tubes.json'
EGO_GT = 'ego_gt.jsonl'
SCENE = 'scene.json'
MANIFEST = 'manifest.json'

def _json_line(obj):
    return canonical_json(obj) + '\n'

def read_json(path):
    if not os.path.exists(path):
        raise UsageError(f'File \'{path}\' does not exist')
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as ex:
            raise DataError(f'invalid JSON: {ex}', path=path)

def write_json(path, obj):
    with open(path, 'w') as fh:
        fh.write(canonical_json(obj, indent=1))
        fh.write('\n')

def iter_jsonl(path):
    """
    Yields (line number, record) for each non-blank line
    """
    if not os.path.exists(path):
        raise UsageError(f'File \'{path}\' does not exist')
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as ex:
                raise DataError(f'invalid JSON: {ex}', path=path, line=lineno)

# ---- calibration ----
def read_calib(path):
    return CameraIntrinsics.from_dict(read_json(path))

def write_calib(path, K):
    write_json(path, K.to_dict())

# ---- depth ----
def write_depth(path, depth):
    """
    Magic b'DPTH', uint32 width, uint32 height, then width * height float32
    values, row-major little-endian; NaN marks invalid pixels
    """
    with open(path, 'wb') as fh:
        fh.write(DEPTH_HEADER.pack(DEPTH_MAGIC, depth.width, depth.height))
        fh.write(depth.values.astype('<f4').tobytes())

def read_depth(path):
    with open(path, 'rb') as fh:
        data = fh.read()
    if len(data) < DEPTH_HEADER.size:
        raise DataError(f'truncated depth header', path=path)
    magic, width, height = DEPTH_HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise DataError(f'bad magic {magic!r}, expected {DEPTH_MAGIC!r}',
                path=path)
    expected = DEPTH_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise DataError(
            f'expected {expected} bytes for a {width}x{height} depth map, got '
            f'{len(data)}', path=path)
    values = np.frombuffer(data, dtype='<f4', offset=DEPTH_HEADER.size)
    try:
        return DepthMap(values.reshape(height, width))
    except DataError as ex:
        raise DataError(ex.msg, path=path)

def depth_path(dataset_dir, t):
    return os.path.join(dataset_dir, DEPTH_DIR, f'{t:06d}.bin')

def count_depth_frames(dataset_dir):
    ddir = os.path.join(dataset_dir, DEPTH_DIR)
    if not os.path.isdir(ddir):
        raise UsageError(f'Dataset \'{dataset_dir}\' has no {DEPTH_DIR}/ directory')
    n = len([f for f in os.listdir(ddir) if f.endswith('.bin')])
    missing = [t for t in range(n) if not os.path.exists(depth_path(dataset_dir, t))]
    if missing:
        raise DataError(f'depth frames are not numbered 0..{n - 1}; missing '
                f'{missing[:5]}', path=ddir)
    return n

def iter_depth(dataset_dir, num_frames):
    for t in range(num_frames):
        yield read_depth(depth_path(dataset_dir, t))

# ---- matches ----
def write_matches(fh, matches):
    for m in matches:
        fh.write(_json_line(m.to_dict()))

def iter_match_frames(path, num_frames=None):
    """
    Yields (frame, [QuadMatch]) for frames 0, 1, ...; frames without matches
    yield empty lists.  Lines must have nondecreasing frames.
    """
    def parse(lineno, rec):
        try:
            return QuadMatch.from_dict(rec)
        except (KeyError, ValueError) as ex:
            raise DataError(f'bad match record: {ex}', path=path, line=lineno)
    yield from _group_frames(path, parse, num_frames)

def _group_frames(path, parse, num_frames):
    cur, items = 0, []
    last = -1
    for lineno, rec in iter_jsonl(path):
        item = parse(lineno, rec)
        if item.frame < last:
            raise DataError(
                f'frame {item.frame} after frame {last}; records must be '
                f'grouped by nondecreasing frame', path=path, line=lineno)
        last = item.frame
        while cur < item.frame:
            yield cur, items
            cur, items = cur + 1, []
        items.append(item)
    # without a frame count the stream ends at the last record, if any
    stop = last + 1 if num_frames is None else num_frames
    while cur < stop:
        yield cur, items
        cur, items = cur + 1, []

# ---- proposals ----
def proposal_record(prop):
    return { 'frame': prop.frame, 'rle_mask': prop.mask.to_rle(),
            'width': prop.mask.width, 'height': prop.mask.height,
            'objectness': prop.objectness,
            'class_posterior': prop.class_posterior.tolist() }

def write_proposals(fh, proposals):
    for p in proposals:
        fh.write(_json_line(proposal_record(p)))

def iter_proposal_frames(path, num_frames=None, K=None):
    """
    Yields (frame, [FrameProposal]) for frames 0, 1, ...  Proposal indices
    follow line order within a frame.  With {K}, mask sizes are checked
    against the camera.
    """
    counter = {}
    def parse(lineno, rec):
        try:
            w, h = int(rec['width']), int(rec['height'])
            if K is not None and (w, h) != (K.width, K.height):
                raise DataError(f'mask is {w}x{h} but camera is '
                        f'{K.width}x{K.height}', path=path, line=lineno)
            t = int(rec['frame'])
            mask = BitMask.from_rle(rec['rle_mask'], w, h)
            idx = counter.get(t, 0)
            counter[t] = idx + 1
            return FrameProposal(t, mask, rec['objectness'],
                    rec['class_posterior'], index=idx)
        except KeyError as ex:
            raise DataError(f'missing field {ex}', path=path, line=lineno)
        except DataError as ex:
            if ex.path is not None:
                raise
            raise DataError(ex.msg, path=path, line=lineno)
    yield from _group_frames(path, parse, num_frames)

# ---- flow ----
def flow_record(ff):
    return { 'frame': ff.frame, 'ego': ff.ego.motion.to_dict(),
            'ego_ok': ff.ego.ok, 'dropped': ff.dropped,
            'flows': [[f.point_prev.tolist(), f.point_cur.tolist(),
                None if f.pixel_cur is None else f.pixel_cur.tolist()]
                for f in ff.flows] }

def parse_flow(rec, path=None, line=None):
    try:
        ego = EgoEstimate(RigidMotion.from_dict(rec['ego']), bool(rec['ego_ok']))
        flows = [SceneFlowVector(p, c, pix) for p, c, pix in rec['flows']]
        return FlowFrame(int(rec['frame']), ego, flows, int(rec.get('dropped', 0)))
    except KeyError as ex:
        raise DataError(f'missing field {ex}', path=path, line=line)
    except DataError as ex:
        raise DataError(ex.msg, path=path, line=line)

def iter_flow(path):
    expect = 0
    for lineno, rec in iter_jsonl(path):
        ff = parse_flow(rec, path, lineno)
        if ff.frame != expect:
            raise DataError(f'expected frame {expect}, got {ff.frame}',
                    path=path, line=lineno)
        expect += 1
        yield ff

# ---- tubes ----
class TubeWriter(object):
    """
    Writes a tubes file one track at a time.  The header keys (width, height
    and {extra}) come first and the 'tubes' list last, so tracks can be
    written as soon as they are final.
    """
    def __init__(self, path, K, extra=None):
        self.path = path
        self.header = { 'width': K.width, 'height': K.height }
        self.header.update(extra or {})
        if 'tubes' in self.header:
            raise UsageError(f'{type(self).__qualname__}: \'tubes\' is reserved')
        self.fh = None
        self.count = 0

    def __repr__(self):
        return f'{type(self).__qualname__}({self.path}, tubes={self.count})'

    def __enter__(self):
        self.fh = open(self.path, 'w')
        head = canonical_json(self.header, indent=1)
        self.fh.write(head[:-2] + ',\n "tubes": [\n')
        return self

    def write(self, track):
        if self.count > 0:
            self.fh.write(',\n')
        self.fh.write('  ' + canonical_json(track.to_dict()))
        self.count += 1

    def __exit__(self, *exc):
        self.fh.write('\n ]\n}\n')
        self.fh.close()
        self.fh = None
        return False

def write_tubes(path, tracks, K, extra=None):
    with TubeWriter(path, K, extra) as out:
        for tr in tracks:
            out.write(tr)

def read_tubes(path, selected_only=False):
    doc = read_json(path)
    try:
        w, h = int(doc['width']), int(doc['height'])
        tracks = [TubeTrack.from_dict(d, w, h) for d in doc['tubes']]
    except KeyError as ex:
        raise DataError(f'missing field {ex}', path=path)
    except DataError as ex:
        raise DataError(ex.msg, path=path)
    if selected_only:
        tracks = [tr for tr in tracks if tr.selected]
    return tracks

# ---- manifest ----
def file_hashes(paths, root):
    """
    {relative path: sha256} of each file in {paths}, directories expanded
    """
    out = {}
    for p in paths:
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                out.update(file_hashes([os.path.join(p, name)], root))
        elif os.path.exists(p):
            out[os.path.relpath(p, root)] = sha256_file(p)
    return out

def write_manifest(path, command, config, inputs, outputs):
    from . import __version__
    root = os.path.dirname(os.path.abspath(path))
    doc = { 'command': command, 'config': config,
            'inputs': file_hashes(inputs, root),
            'outputs': file_hashes(outputs, root),
            'version': __version__ }
    write_json(path, doc)
    return doc

def prepare_out_dir(out_dir, force):
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise UsageError(
            f'Output directory \'{out_dir}\' is not empty; pass --force to '
            f'overwrite')
    os.makedirs(os.path.join(out_dir, DEPTH_DIR), exist_ok=True)

def write_dataset(scene, out_dir, force=False, progress=None):
    """
    Write a SyntheticScene in the pipeline's input formats plus ground truth
    """
    prepare_out_dir(out_dir, force)
    K = scene.camera
    join = lambda name: os.path.join(out_dir, name)
    write_calib(join(CALIB), K)
    scene.config.save(join(SCENE))
    gt_masks, gt_pos = {}, {}
    with open(join(MATCHES), 'w') as mfh, open(join(PROPOSALS), 'w') as pfh, \
            open(join(EGO_GT), 'w') as efh:
        for fr in scene.iter_frames():
            write_depth(depth_path(out_dir, fr.frame), fr.depth)
            write_matches(mfh, fr.matches)
            write_proposals(pfh, fr.proposals)
            efh.write(_json_line({ 'frame': fr.frame, 'ego': fr.ego.to_dict() }))
            for entry in fr.gt:
                gt_masks.setdefault(entry.object_id, {})[fr.frame] = entry.mask
                gt_pos.setdefault(entry.object_id, {})[fr.frame] = entry.position
            if progress is not None:
                progress(fr.frame)
    tracks = []
    for obj in scene.objects:
        if obj.id in gt_masks:
            tracks.append(TubeTrack(obj.id, gt_masks[obj.id], gt_pos[obj.id],
                known=obj.known, category=obj.category))
    write_tubes(join(GT_TUBES), tracks, K)
    outputs = [join(n) for n in (CALIB, SCENE, MATCHES, PROPOSALS, EGO_GT,
        GT_TUBES, DEPTH_DIR)]
    return write_manifest(join(MANIFEST), 'synth', scene.config.to_dict(), [],
            outputs)

def read_ego_gt(path):
    return [RigidMotion.from_dict(rec['ego']) for _, rec in iter_jsonl(path)]
