import logging
import os
from .config import (PipelineConfig, FlowConfig, LocalizeConfig, TrackingConfig,
        ScoringConfig, SelectConfig)
from .error import (VtubesError, UsageError, DataError, GeometryError,
        NumericalError, InternalError)
from .geometry import CameraIntrinsics, RigidMotion, DepthMap, warp_mask
from .mask import BitMask, mask_iou, box_iou
from .sceneflow import (QuadMatch, EgoEstimate, FlowFrame, frame_flow,
        estimate_egomotion, compute_scene_flow, cyclic_filter)
from .proposals import FrameProposal, localize, localize_frame
from .tracking import Tube, TubeEnumerator, FrameContext, enumerate_tubes
from .scoring import score_tubes, tube_score
from .coselect import (SelectionProblem, BatchSelector, coselect_batches,
        minimize, exact_minimize)
from .synth import SceneConfig, SyntheticScene, generate
from .evaluate import (TubeTrack, MotResult, clear_mot, recall_curve,
        loc_error_by_distance, rank_average_precision)
from . import fileio

try:
    from .version import __version__
except ImportError:
    __version__ = '0.0.0'

logger = logging.getLogger(__name__)

def run_flow(K, match_frames, cfg=None):
    """
    The flow stage over a stream of per-frame match lists (frame 0 first).
    Each frame's Gauss-Newton starts from the previous frame's estimate.
    Yields FlowFrame.
    """
    cfg = cfg or FlowConfig()
    init = None
    for t, matches in enumerate(match_frames):
        ff = frame_flow(t, matches, K, cfg, init)
        init = ff.ego.motion if ff.ego.ok else None
        yield ff

def run_tubes(K, frames, cfg=None, on_problem=None, progress=None, on_tube=None):
    """
    The tube stage: localize, enumerate, score and co-select.

    {frames} yields (proposals, depth, FlowFrame) per frame, frame 0 first.
    Only the enumeration window of depth maps is held at once.  Each batch
    of {cfg.select.batch_len} frames is co-selected as soon as no tube still
    to come can reach it, and its tubes are released with their `selected`
    verdict set.  With {on_tube}, every released tube is passed to it and
    not retained; otherwise every enumerated Tube is returned, ordered by id.
    """
    cfg = cfg or PipelineConfig()
    sel = cfg.select
    enum = TubeEnumerator(K, cfg.tracking)
    selector = BatchSelector(sel.eps1, sel.eps2, sel.batch_len, sel.node_budget,
            on_problem)
    released = []
    emit = on_tube or released.append

    def release(tubes):
        for tube in sorted(tubes, key=lambda t: t.id):
            emit(tube)

    for t, (props, depth, flow) in enumerate(frames):
        if flow.frame != t:
            raise DataError(f'run_tubes: flow record for frame {flow.frame} '
                    f'arrived at frame {t}')
        depth.check_camera(K)
        localize_frame(props, depth, flow.flows, flow.ego.motion, K, cfg.localize)
        enum.push(FrameContext(t, props, depth, flow.ego))
        selector.add(score_tubes(enum.drain(), cfg.scoring))
        release(selector.advance(enum.frontier()))
        if progress is not None:
            progress(t)
    selector.add(score_tubes(enum.finish(), cfg.scoring))
    release(selector.finish())
    logger.info(f'run_tubes: {selector.num_kept} of {selector.num_released} '
            f'tubes selected')
    if on_tube is None:
        return sorted(released, key=lambda t: t.id)

def dataset_frames(dataset_dir, flow_path=None, cfg=None):
    """
    Stream (proposals, depth, FlowFrame) from a dataset directory.  Without
    {flow_path} the flow stage runs on the dataset's matches.
    Returns (camera, number of frames, frame iterator).
    """
    cfg = cfg or PipelineConfig()
    K = fileio.read_calib(os.path.join(dataset_dir, fileio.CALIB))
    n = fileio.count_depth_frames(dataset_dir)
    if flow_path is None:
        matches = (m for _, m in fileio.iter_match_frames(
            os.path.join(dataset_dir, fileio.MATCHES), n))
        flows = run_flow(K, matches, cfg.flow)
    else:
        flows = fileio.iter_flow(flow_path)
    props = (p for _, p in fileio.iter_proposal_frames(
        os.path.join(dataset_dir, fileio.PROPOSALS), n, K))
    depths = fileio.iter_depth(dataset_dir, n)

    def frames():
        count = 0
        for item in zip(props, depths, flows):
            count += 1
            yield item
        if count != n:
            raise DataError(f'{dataset_dir}: flow or proposals cover {count} of '
                    f'{n} frames')
    return K, n, frames()

def to_tracks(tubes):
    return [TubeTrack.from_tube(t) for t in tubes]
