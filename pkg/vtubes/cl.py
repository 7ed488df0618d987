import fire
import logging
import os
import sys
import vtubes
from vtubes import fileio, report, tune, validate
from vtubes.base import canonical_json
from vtubes.config import PipelineConfig
from vtubes.error import VtubesError, UsageError, DataError, InternalError
from vtubes.evaluate import (clear_mot, recall_curve, loc_error_by_distance,
        image_candidates, rank_average_precision, DEFAULT_BINS, DEFAULT_BUDGETS)

logger = logging.getLogger('vtubes')

TABLE_ROWS = 20

def _progress(label):
    def show(t, *rest):
        print(f'\r{label}: {t:-5d}', end='', file=sys.stderr)
    return show

def _done():
    print(file=sys.stderr)

def cmd_synth(out_dir, config=None, seed=None, force=False):
    """
    Generate a synthetic dataset into {out_dir} from a SceneConfig JSON file
    (defaults if omitted).  --seed overrides the config's seed.
    """
    cfg = vtubes.SceneConfig.load(config)
    if seed is not None:
        cfg.seed = int(seed)
    scene = vtubes.generate(cfg)
    fileio.write_dataset(scene, out_dir, force, _progress('Frame'))
    _done()
    print(f'Wrote {scene.num_frames} frames to {out_dir}')

def cmd_flow(matches, calib, out, config=None):
    """
    Cyclic filtering, egomotion and scene flow for every frame of {matches}
    """
    cfg = PipelineConfig.load(config)
    K = fileio.read_calib(calib)
    frames = (m for _, m in fileio.iter_match_frames(matches))
    fallbacks = 0
    with open(out, 'w') as fh:
        for ff in vtubes.run_flow(K, frames, cfg.flow):
            fh.write(canonical_json(fileio.flow_record(ff)) + '\n')
            fallbacks += int(not ff.ego.ok)
            _progress('Frame')(ff.frame)
    _done()
    if fallbacks:
        logger.warning(f'{fallbacks} frames fell back to identity egomotion')
    fileio.write_manifest(out + '.manifest.json', 'flow', cfg.to_dict(),
            [matches, calib], [out])

def cmd_tubes(dataset_dir, out, flow=None, config=None, dump_batches=None):
    """
    Localize, enumerate, score and co-select tubes for a dataset.  Without
    --flow, the flow stage runs on the dataset's matches.  --dump_batches
    writes each co-selection problem as JSON into the given directory.
    Tubes are written as their batches are settled.
    """
    cfg = PipelineConfig.load(config)
    K, n, frames = vtubes.dataset_frames(dataset_dir, flow, cfg)
    on_problem = None
    if dump_batches is not None:
        os.makedirs(dump_batches, exist_ok=True)
        def on_problem(problem):
            name = f'batch_{problem.span[0]:06d}.json'
            fileio.write_json(os.path.join(dump_batches, name), problem.to_dict())
    counts = { 'tubes': 0, 'selected': 0 }
    top = []
    with fileio.TubeWriter(out, K, { 'config': cfg.to_dict() }) as writer:
        def on_tube(tube):
            track = vtubes.TubeTrack.from_tube(tube)
            writer.write(track)
            counts['tubes'] += 1
            counts['selected'] += int(track.selected)
            top.append(track)
            top.sort(key=lambda tr: (-tr.scores.get('total', 0.0), tr.id))
            del top[TABLE_ROWS:]
        vtubes.run_tubes(K, frames, cfg, on_problem, _progress('Frame'), on_tube)
    _done()
    print(f'{counts["tubes"]} tubes, {counts["selected"]} selected')
    print('\n'.join(report.tube_table(top, TABLE_ROWS)))
    inputs = [os.path.join(dataset_dir, f) for f in (fileio.CALIB,
        fileio.PROPOSALS, fileio.MATCHES, fileio.DEPTH_DIR)]
    if flow is not None:
        inputs.append(flow)
    fileio.write_manifest(out + '.manifest.json', 'tubes', cfg.to_dict(), inputs,
            [out])

def cmd_eval(gt, tubes, out_dir, proposals=None, iou_threshold=0.5,
        use_box=False, bins=None, budgets=None):
    """
    CLEAR-MOT of the selected tubes, recall curves for the selected and the
    full tube sets (split by known and unknown objects), localization error by
    distance and ranking average precision per score.  --proposals adds the
    image-level recall curve of a proposals.jsonl file.
    """
    os.makedirs(out_dir, exist_ok=True)
    bins = DEFAULT_BINS if bins is None else tuple(float(b) for b in bins)
    budgets = DEFAULT_BUDGETS if budgets is None else tuple(int(b) for b in budgets)
    gt_tracks = fileio.read_tubes(gt)
    all_tracks = fileio.read_tubes(tubes)
    selected = [tr for tr in all_tracks if tr.selected]

    mot = clear_mot(gt_tracks, selected, iou_threshold, use_box)
    loc = loc_error_by_distance(gt_tracks, selected, bins, mot)

    groups = { 'all': gt_tracks,
            'known': [g for g in gt_tracks if g.known],
            'unknown': [g for g in gt_tracks if not g.known] }
    curves = {}
    for gname, gts in groups.items():
        if not gts:
            continue
        curves[f'selected/{gname}'] = recall_curve(selected, gts, 0.5, budgets)
        curves[f'tubes/{gname}'] = recall_curve(all_tracks, gts, 0.5, budgets)
        if proposals is not None:
            cands = image_candidates(p for _, p in
                    fileio.iter_proposal_frames(proposals))
            curves[f'proposals/{gname}'] = recall_curve(cands, gts, 0.5, budgets)

    ap = {}
    for key in ('total', 'motion', 'mask', 'objectness', 'mask+motion'):
        if all_tracks and all(k in all_tracks[0].scores for k in key.split('+')):
            ap[key] = rank_average_precision(all_tracks, gt_tracks, key)

    report.write_recall_csv(os.path.join(out_dir, 'recall.csv'), curves)
    report.write_loc_csv(os.path.join(out_dir, 'loc_error.csv'), loc)
    report.write_mot_log_csv(os.path.join(out_dir, 'mot_frames.csv'), mot)
    summary = { 'mot': mot.to_dict(), 'average_precision': ap,
            'iou_threshold': iou_threshold, 'use_box': use_box,
            'loc_error': [b._asdict() for b in loc],
            'recall': { k: [list(p) for p in v] for k, v in curves.items() } }
    fileio.write_json(os.path.join(out_dir, 'summary.json'), summary)
    inputs = [gt, tubes] + ([] if proposals is None else [proposals])
    outputs = [os.path.join(out_dir, name) for name in ('recall.csv',
        'loc_error.csv', 'mot_frames.csv', 'summary.json')]
    settings = { 'iou_threshold': iou_threshold, 'use_box': use_box,
            'bins': list(bins), 'budgets': list(budgets) }
    fileio.write_manifest(os.path.join(out_dir, fileio.MANIFEST), 'eval', settings,
            inputs, outputs)

    print('\n'.join(report.mot_table({ 'selected': mot })))
    print()
    print('\n'.join(report.recall_table(curves)))
    print()
    print('\n'.join(report.loc_table(loc)))

def cmd_tune(dataset_dir, search_budget, out_config, config=None, seed=0):
    """
    Random search over scoring and co-selection parameters on the scenes of
    {dataset_dir}, writing the config with the best mean MOTA
    """
    base_cfg = PipelineConfig.load(config)
    dirs = tune.scene_dirs(dataset_dir)
    if not dirs:
        raise UsageError(f'No datasets found under \'{dataset_dir}\'')
    scenes = []
    for d in dirs:
        K, n, frames = vtubes.dataset_frames(d, None, base_cfg)
        tubes = vtubes.run_tubes(K, frames, base_cfg)
        gt = fileio.read_tubes(os.path.join(d, fileio.GT_TUBES))
        scenes.append(tune.ValidationScene(os.path.basename(d), tubes, gt,
            base_cfg))
        print(f'Prepared {scenes[-1]}')
    def show(i, mota, best):
        print(f'\rCandidate: {i:-5d}  MOTA {mota:.4f}  best {best:.4f}', end='')
    best, history = tune.tune(scenes, search_budget, base_cfg, seed, show)
    print()
    best.save(out_config)
    settings = { 'base': base_cfg.to_dict(), 'search_budget': int(search_budget),
            'seed': int(seed), 'best_mota': max(m for _, m, _ in history) }
    fileio.write_manifest(out_config + '.manifest.json', 'tune', settings, dirs,
            [out_config])
    print(f'Wrote {out_config}')

def cmd_validate(dataset_dir):
    """
    Check that every file of a dataset parses and is consistent
    """
    rep = validate.validate_dataset(dataset_dir, _progress('Depth frame'))
    _done()
    print(rep.summary())
    if not rep.ok:
        raise DataError(f'{len(rep.problems)} problems found')

def cmd_defaults():
    """
    Print the default pipeline config
    """
    print(PipelineConfig().to_json())

def main():
    argv = sys.argv[1:]
    verbose = '--verbose' in argv
    if verbose:
        argv = [a for a in argv if a != '--verbose']
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
            format='%(levelname)s %(name)s: %(message)s')
    func_map = {
            'synth': cmd_synth,
            'flow': cmd_flow,
            'tubes': cmd_tubes,
            'eval': cmd_eval,
            'tune': cmd_tune,
            'validate': cmd_validate,
            'defaults': cmd_defaults
            }
    try:
        fire.Fire(func_map, command=argv)
    except VtubesError as ex:
        print(f'Error: {ex.msg}', file=sys.stderr)
        sys.exit(ex.exit_code)
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as ex:
        err = InternalError(ex)
        print(f'Internal error: {err.msg}', file=sys.stderr)
        sys.exit(err.exit_code)

if __name__ == '__main__':
    main()
