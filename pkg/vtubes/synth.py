import dataclasses
import json
import logging
import os
from collections import namedtuple
from dataclasses import dataclass
import numpy as np
from .error import DataError, UsageError
from .evaluate import TubeTrack
from .geometry import CameraIntrinsics, RigidMotion, DepthMap
from .mask import BitMask
from .proposals import FrameProposal, NUM_CLASSES, UNKNOWN_CLASS
from .sceneflow import (QuadMatch, EgoEstimate, FlowFrame, frame_flow,
        compute_scene_flow)
from . import base

"""
Deterministic synthetic stereo scenes: axis-aligned 3D boxes moving over a
flat ground plane, seen by a moving rectified stereo camera.

World coordinates coincide with the frame-0 camera (x right, y down,
z forward); the ground is the plane y = camera_height.  Each frame is
rendered by casting one ray per pixel through a z-buffer, which yields
depth, per-pixel object labels and hence visible object masks.  From these
the generator derives everything the pipeline consumes: depth maps, quad
matches on visible surfaces, and proposal sets made of jittered object masks
plus clutter boxes at uniform ground positions.

All randomness comes from generators keyed by (seed, frame, entity), so any
frame can be regenerated on its own and identical configs give identical
data.
"""

logger = logging.getLogger(__name__)

# entity keys of the keyed random streams
ENT_WORLD = 0
ENT_DEPTH = 1
ENT_MATCHES = 2
ENT_CLUTTER = 3
ENT_ORDER = 4
ENT_OBJECT = 100

CLUTTER_TRIES = 1000
MIN_CLUTTER_PX = 9
PEAK_MASS = 0.9

def keyed_rng(seed, frame, entity):
    return np.random.default_rng([seed, frame, entity])

@dataclass
class SceneConfig:
    seed: int = 0
    frames: int = 100
    n_objects: int = 5
    # explicit objects, each a dict with 'position' (x, z), 'velocity'
    # (vx, vz), 'size' (w, h, l) and optionally 'known' and 'category';
    # overrides n_objects
    objects: list = None

    width: int = 320
    height: int = 120
    focal: float = 180.0
    baseline: float = 0.54
    camera_height: float = 1.6
    max_depth: float = 80.0

    size_lo: tuple = (0.8, 1.2, 0.8)      # (w, h, l) m
    size_hi: tuple = (2.0, 2.0, 4.5)
    spawn_x: tuple = (-6.0, 6.0)
    spawn_z: tuple = (10.0, 25.0)
    velocity_lo: tuple = (-0.03, 0.05)    # (vx, vz) m/frame
    velocity_hi: tuple = (0.03, 0.15)
    trajectory_noise: float = 0.005       # m per frame, on x and z
    min_separation: float = 1.0           # m between box footprints at t=0
    # rad kept between the horizontal view extents of random objects in
    # every frame; None lets them occlude each other
    min_view_gap: float = 0.02
    unknown_fraction: float = 0.4

    ego_forward: float = 0.1              # m/frame
    ego_yaw: float = 0.0                  # rad/frame
    # per-frame egomotion dicts (RigidMotion.to_dict), overriding the
    # constant forward/yaw motion; entry t-1 maps camera t-1 into camera t
    ego_script: list = None

    clutter_rate: int = 50
    clutter_x: tuple = (-40.0, 40.0)
    clutter_z: tuple = (1.0, 51.0)
    clutter_size_lo: tuple = (0.4, 0.4)   # (w, h) m
    clutter_size_hi: tuple = (2.5, 2.0)
    mask_jitter_px: float = 0.5
    drop_prob: float = 0.05
    objectness_true: tuple = (0.6, 1.0)
    objectness_clutter: tuple = (0.0, 0.2)
    min_visible_px: int = 30

    n_matches: int = 300
    matches_per_object: int = 20
    match_noise_px: float = 0.2
    outlier_fraction: float = 0.05
    disparity_noise_px: float = 0.1

    def __post_init__(self):
        if self.frames < 1 or self.n_objects < 0 or self.clutter_rate < 0:
            raise DataError(
                f'{type(self).__qualname__}: need frames >= 1 and nonnegative '
                f'n_objects, clutter_rate.  Got frames={self.frames}, '
                f'n_objects={self.n_objects}, clutter_rate={self.clutter_rate}')
        probs = dict(drop_prob=self.drop_prob,
                outlier_fraction=self.outlier_fraction,
                unknown_fraction=self.unknown_fraction)
        bad = [k for k, v in probs.items() if not (0.0 <= v <= 1.0)]
        if bad:
            raise DataError(
                f'{type(self).__qualname__}: {base.grammar_list(bad)} must lie '
                f'in [0, 1]')
        for lo, hi in ((self.size_lo, self.size_hi),
                (self.velocity_lo, self.velocity_hi),
                (self.clutter_size_lo, self.clutter_size_hi)):
            if np.any(np.asarray(lo) > np.asarray(hi)):
                raise DataError(
                    f'{type(self).__qualname__}: range {lo} exceeds {hi}')
        noise = (self.trajectory_noise, self.mask_jitter_px, self.match_noise_px,
                self.disparity_noise_px)
        if min(noise) < 0:
            raise DataError(
                f'{type(self).__qualname__}: noise levels must be >= 0')
        if self.ego_script is not None and len(self.ego_script) < self.frames - 1:
            raise DataError(
                f'{type(self).__qualname__}: ego_script has '
                f'{len(self.ego_script)} entries for {self.frames} frames')

    @property
    def camera(self):
        return CameraIntrinsics(self.focal, self.focal, self.width / 2,
                self.height / 2, self.baseline, self.width, self.height)

    def to_dict(self):
        return base.to_jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d):
        names = { f.name for f in dataclasses.fields(cls) }
        unknown = set(d) - names
        if unknown:
            raise DataError(
                f'{cls.__qualname__}: unknown keys '
                f'{base.grammar_list(sorted(unknown))}')
        d = { k: tuple(v) if isinstance(v, list) and k not in ('objects', 'ego_script')
                else v for k, v in d.items() }
        return cls(**d)

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        if not os.path.exists(path):
            raise UsageError(f'Scene config file \'{path}\' does not exist')
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as ex:
                raise DataError(f'invalid JSON: {ex}', path=path)
        return cls.from_dict(d)

    def save(self, path):
        with open(path, 'w') as fh:
            fh.write(base.canonical_json(self.to_dict(), indent=2))
            fh.write('\n')

class SceneObject(object):
    """
    A box on the ground plane with a world-frame trajectory of centers
    """
    def __init__(self, obj_id, size, centers, known, category):
        self.id = obj_id
        self.size = np.asarray(size, dtype=float)
        self.centers = centers         # (frames, 3) world coordinates
        self.known = known
        self.category = category

    def __repr__(self):
        return (f'{type(self).__qualname__}(id={self.id}, '
                f'size={np.round(self.size, 2).tolist()}, known={self.known})')

    def bounds(self, t):
        half = 0.5 * self.size
        return self.centers[t] - half, self.centers[t] + half

Render = namedtuple('Render', ['depth', 'labels', 'silhouettes'])

# everything generated for one frame
SyntheticFrame = namedtuple('SyntheticFrame', ['frame', 'depth', 'ego',
    'matches', 'match_inliers', 'proposals', 'gt'])

# ground truth of one object in one frame
GtEntry = namedtuple('GtEntry', ['object_id', 'mask', 'position'])

def class_posterior(category, rng=None):
    """
    A posterior peaked at {category}, or a random Dirichlet draw when
    {category} is None
    """
    if category is None:
        return rng.dirichlet(np.full(NUM_CLASSES, 0.5))
    post = np.full(NUM_CLASSES, (1.0 - PEAK_MASS) / (NUM_CLASSES - 1))
    post[category] = PEAK_MASS
    return post

class SyntheticScene(object):
    """
    The generated world.  Frames are produced on demand by frame(t); the same
    t always yields the same data.
    """
    def __init__(self, config):
        self.config = config
        self.camera = config.camera
        self.egos = self._ego_script()
        self.poses = self._camera_poses()
        self.objects = self._objects()
        self._check_start()

    def __repr__(self):
        return (f'{type(self).__qualname__}(seed={self.config.seed}, '
                f'frames={self.num_frames}, objects={len(self.objects)})')

    @property
    def num_frames(self):
        return self.config.frames

    # ---- world ----
    def _ego_script(self):
        cfg = self.config
        egos = [RigidMotion.identity()]
        for t in range(1, cfg.frames):
            if cfg.ego_script is not None:
                egos.append(RigidMotion.from_dict(cfg.ego_script[t - 1]))
            else:
                step = RigidMotion.from_rotvec([0.0, cfg.ego_yaw, 0.0],
                        [0.0, 0.0, cfg.ego_forward])
                egos.append(step.inverse())
        return egos

    def _camera_poses(self):
        # camera-to-world per frame
        poses = [RigidMotion.identity()]
        for ego in self.egos[1:]:
            poses.append(poses[-1].compose(ego.inverse()))
        return poses

    def _objects(self):
        cfg = self.config
        rng = keyed_rng(cfg.seed, 0, ENT_WORLD)
        layouts = cfg.objects
        if layouts is None:
            layouts = self._random_layouts(rng)
        objects = []
        for k, layout in enumerate(layouts):
            size = np.asarray(layout['size'], dtype=float)
            x, z = layout['position']
            vx, vz = layout['velocity']
            known = bool(layout.get('known', True))
            category = int(layout.get('category', k % UNKNOWN_CLASS)) if known else None
            centers = np.zeros((cfg.frames, 3))
            centers[0] = [x, cfg.camera_height - size[1] / 2, z]
            orng = keyed_rng(cfg.seed, 0, ENT_OBJECT + k)
            noise = orng.normal(0.0, cfg.trajectory_noise, (cfg.frames, 2))
            for t in range(1, cfg.frames):
                centers[t] = centers[t - 1]
                centers[t, [0, 2]] += [vx, vz] + noise[t]
            objects.append(SceneObject(k, size, centers, known, category))
        return objects

    def _random_layouts(self, rng):
        cfg = self.config
        layouts = []
        views = []
        for k in range(cfg.n_objects):
            for _ in range(CLUTTER_TRIES):
                size = rng.uniform(cfg.size_lo, cfg.size_hi)
                pos = rng.uniform([cfg.spawn_x[0], cfg.spawn_z[0]],
                        [cfg.spawn_x[1], cfg.spawn_z[1]])
                vel = rng.uniform(cfg.velocity_lo, cfg.velocity_hi)
                view = self._view_extent(pos, vel, size)
                if (all(_footprint_gap(pos, size, s) >= cfg.min_separation
                        for s in layouts) and
                        all(_views_apart(view, v, cfg.min_view_gap) for v in views)):
                    break
            else:
                logger.warning(f'synth: object {k} overlaps another after '
                        f'{CLUTTER_TRIES} placement tries')
            views.append(view)
            known = bool(rng.random() >= cfg.unknown_fraction)
            layouts.append({ 'position': pos.tolist(), 'velocity': vel.tolist(),
                'size': size.tolist(), 'known': known })
        return layouts

    def _view_extent(self, pos, vel, size):
        """
        Per frame, the (min, max) azimuth of a box moving without trajectory
        noise, NaN where part of it is behind the camera
        """
        cfg = self.config
        t = np.arange(cfg.frames)
        half = 0.5 * np.asarray(size)
        signs = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).reshape(3, -1).T
        centers = np.stack([pos[0] + vel[0] * t,
            np.full(len(t), cfg.camera_height - half[1]), pos[1] + vel[1] * t],
            axis=1)
        corners = centers[:, None, :] + signs * half      # (frames, 8, 3)
        inv = [pose.inverse() for pose in self.poses]
        R = np.stack([m.rotation for m in inv])
        tr = np.stack([m.translation for m in inv])
        cam = np.einsum('fij,fkj->fki', R, corners) + tr[:, None, :]
        ang = np.arctan2(cam[..., 0], cam[..., 2])
        ext = np.stack([ang.min(axis=1), ang.max(axis=1)], axis=1)
        ext[np.any(cam[..., 2] <= 0.1, axis=1)] = np.nan
        return ext

    def _check_start(self):
        for obj in self.objects:
            near = obj.centers[0, 2] - obj.size[2] / 2
            if near <= 0:
                raise DataError(
                    f'{type(self).__qualname__}: object {obj.id} starts behind '
                    f'or at the camera (nearest depth {near:.3f} m)')

    def object_center(self, obj, t):
        """
        Box center in frame-t camera coordinates
        """
        return self.poses[t].inverse().apply(obj.centers[t])

    # ---- rendering ----
    def _rays(self, t):
        K = self.camera
        u, v = np.meshgrid(np.arange(K.width, dtype=float),
                np.arange(K.height, dtype=float))
        d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)],
                axis=-1).reshape(-1, 3)
        pose = self.poses[t]
        return pose.translation, pose.apply_vector(d)

    def render(self, t):
        """
        Noiseless z-buffer render of frame t.  depth is float64 camera z with
        NaN for sky and beyond max_depth; labels hold the object index, -1
        for ground and -2 for no surface.  silhouettes are the unoccluded box
        masks.
        """
        cfg, K = self.config, self.camera
        origin, dirs = self._rays(t)
        npix = len(dirs)
        zbuf = np.full(npix, np.inf)
        labels = np.full(npix, -2, dtype=np.int64)

        with np.errstate(divide='ignore', invalid='ignore'):
            tg = (cfg.camera_height - origin[1]) / dirs[:, 1]
        ground = (dirs[:, 1] > 1e-12) & (tg > 0)
        zbuf[ground] = tg[ground]
        labels[ground] = -1

        safe = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
        inv = 1.0 / safe
        silhouettes = []
        for obj in self.objects:
            lo, hi = obj.bounds(t)
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
            tmin = np.minimum(t1, t2).max(axis=1)
            tmax = np.maximum(t1, t2).min(axis=1)
            hit = (tmax >= tmin) & (tmin > 1e-6)
            silhouettes.append(BitMask(hit.reshape(K.height, K.width)))
            closer = hit & (tmin < zbuf)
            zbuf[closer] = tmin[closer]
            labels[closer] = obj.id

        far = ~np.isfinite(zbuf) | (zbuf > cfg.max_depth)
        zbuf[far] = np.nan
        labels[far] = -2
        return Render(zbuf.reshape(K.height, K.width),
                labels.reshape(K.height, K.width), silhouettes)

    def _noisy_depth(self, depth, t):
        cfg, K = self.config, self.camera
        if cfg.disparity_noise_px == 0:
            return DepthMap(depth)
        rng = keyed_rng(cfg.seed, t, ENT_DEPTH)
        fb = K.fx * K.baseline
        with np.errstate(invalid='ignore', divide='ignore'):
            disp = fb / depth + rng.normal(0.0, cfg.disparity_noise_px, depth.shape)
            noisy = np.where(disp > 0.05, fb / disp, np.nan)
            noisy[~np.isfinite(depth) | (noisy > cfg.max_depth)] = np.nan
        return DepthMap(noisy)

    # ---- ground truth and proposals ----
    def ground_truth(self, t, rend=None):
        rend = rend or self.render(t)
        entries = []
        for obj in self.objects:
            bits = rend.labels == obj.id
            if np.count_nonzero(bits) < self.config.min_visible_px:
                continue
            entries.append(GtEntry(obj.id, BitMask(bits),
                self.object_center(obj, t)))
        return entries

    def _true_proposals(self, t, gt):
        cfg = self.config
        props = []
        for entry in gt:
            obj = self.objects[entry.object_id]
            rng = keyed_rng(cfg.seed, t, ENT_OBJECT + obj.id)
            drop, jitter, score = (rng.random(), rng.normal(0.0, 1.0, 2),
                    rng.uniform(*cfg.objectness_true))
            if drop < cfg.drop_prob:
                continue
            dx, dy = np.rint(jitter * cfg.mask_jitter_px).astype(int)
            mask = entry.mask.shifted(int(dx), int(dy)) if (dx or dy) else entry.mask
            if mask.is_empty():
                continue
            category = obj.category if obj.known else UNKNOWN_CLASS
            props.append((mask, score, class_posterior(category)))
        return props

    def _clutter_proposals(self, t):
        cfg, K = self.config, self.camera
        rng = keyed_rng(cfg.seed, t, ENT_CLUTTER)
        props = []
        H = cfg.camera_height
        for _ in range(cfg.clutter_rate):
            for _ in range(CLUTTER_TRIES):
                x = rng.uniform(*cfg.clutter_x)
                z = rng.uniform(*cfg.clutter_z)
                w, h = rng.uniform(cfg.clutter_size_lo, cfg.clutter_size_hi)
                x0 = np.floor(K.fx * (x - w / 2) / z + K.cx)
                x1 = np.ceil(K.fx * (x + w / 2) / z + K.cx)
                y0 = np.floor(K.fy * (H - h) / z + K.cy)
                y1 = np.ceil(K.fy * H / z + K.cy)
                mask = BitMask.from_box(K.width, K.height, x0, y0, x1, y1)
                if mask.area >= MIN_CLUTTER_PX:
                    break
            else:
                continue
            score = rng.uniform(*cfg.objectness_clutter)
            props.append((mask, score, class_posterior(None, rng)))
        return props

    def proposals(self, t, gt=None):
        """
        Jittered object masks plus clutter, in a shuffled order
        """
        cfg = self.config
        gt = self.ground_truth(t) if gt is None else gt
        raw = self._true_proposals(t, gt) + self._clutter_proposals(t)
        order = keyed_rng(cfg.seed, t, ENT_ORDER).permutation(len(raw))
        return [FrameProposal(t, raw[i][0], raw[i][1], raw[i][2], index=k)
                for k, i in enumerate(order)]

    # ---- matches ----
    def matches(self, t, prev=None):
        """
        Quad matches between frames t-1 and t, with a boolean inlier label
        per match.  Frame 0 has none.
        """
        cfg, K = self.config, self.camera
        if t == 0:
            return [], np.zeros(0, dtype=bool)
        prev = prev or self.render(t - 1)
        rng = keyed_rng(cfg.seed, t, ENT_MATCHES)
        rows, cols = np.nonzero(np.isfinite(prev.depth))
        if len(rows) == 0:
            return [], np.zeros(0, dtype=bool)
        pick = [rng.choice(len(rows), size=min(cfg.n_matches, len(rows)),
            replace=False)]
        for obj in self.objects:
            on = np.flatnonzero(prev.labels[rows, cols] == obj.id)
            if len(on) > 0:
                pick.append(rng.choice(on, size=min(cfg.matches_per_object,
                    len(on)), replace=False))
        pick = np.concatenate(pick)
        rows, cols = rows[pick], cols[pick]
        z = prev.depth[rows, cols]
        X_prev = np.stack([(cols - K.cx) * z / K.fx, (rows - K.cy) * z / K.fy, z],
                axis=-1)

        # move object points with their box, then into camera t
        Xw = self.poses[t - 1].apply(X_prev)
        lab = prev.labels[rows, cols]
        for obj in self.objects:
            on = lab == obj.id
            Xw[on] += obj.centers[t] - obj.centers[t - 1]
        X_cur = self.poses[t].inverse().apply(Xw)
        ok = X_cur[:, 2] > 0.5
        X_prev, X_cur, cols, rows = X_prev[ok], X_cur[ok], cols[ok], rows[ok]

        def pair(X):
            u = K.fx * X[:, 0] / X[:, 2] + K.cx
            v = K.fy * X[:, 1] / X[:, 2] + K.cy
            ur = K.fx * (X[:, 0] - K.baseline) / X[:, 2] + K.cx
            return np.stack([u, v], -1), np.stack([ur, v], -1)

        lp, rp = pair(X_prev)
        lc, rc = pair(X_cur)
        # chain order: left_prev, right_prev, right_cur, left_cur, left_prev_back
        chain = np.stack([lp, rp, rc, lc, lp.copy()], axis=1)
        if cfg.match_noise_px > 0:
            chain += rng.normal(0.0, cfg.match_noise_px, chain.shape)
        n = len(chain)
        inliers = rng.random(n) >= cfg.outlier_fraction
        steps = rng.integers(1, 4, n)
        angle = rng.uniform(0, 2 * np.pi, n)
        mag = rng.uniform(5.0, 20.0, n)
        offset = np.stack([np.cos(angle), np.sin(angle)], -1) * mag[:, None]
        for i in np.flatnonzero(~inliers):
            chain[i, steps[i]:] += offset[i]

        out, labels = [], []
        for i in range(n):
            m = QuadMatch(t, chain[i, 0], chain[i, 1], chain[i, 3], chain[i, 2],
                    chain[i, 4])
            if m.in_bounds(K):
                out.append(m)
                labels.append(inliers[i])
        return out, np.array(labels, dtype=bool)

    # ---- frames ----
    def frame(self, t, prev=None):
        """
        (SyntheticFrame, render) of frame t.  {prev} may pass in frame t-1's
        render.
        """
        if not (0 <= t < self.num_frames):
            raise UsageError(f'frame {t} out of range [0, {self.num_frames})')
        rend = self.render(t)
        gt = self.ground_truth(t, rend)
        if t > 0 and prev is None:
            prev = self.render(t - 1)
        matches, inliers = self.matches(t, prev)
        return SyntheticFrame(t, self._noisy_depth(rend.depth, t), self.egos[t],
                matches, inliers, self.proposals(t, gt), gt), rend

    def iter_frames(self):
        prev = None
        for t in range(self.num_frames):
            frame, prev = self.frame(t, prev)
            yield frame

    def frames_stream(self, flow_cfg=None, true_ego=False):
        """
        Yields (proposals, depth, FlowFrame) per frame, the input of
        vtubes.run_tubes.  With {true_ego}, the flow stage uses the ground
        truth egomotion and only the inlier matches.
        """
        for fr in self.iter_frames():
            if true_ego:
                kept = [m for m, ok in zip(fr.matches, fr.match_inliers) if ok]
                flows, dropped = compute_scene_flow(kept, self.camera)
                flow = FlowFrame(fr.frame, EgoEstimate(fr.ego, True), flows, dropped)
            else:
                flow = frame_flow(fr.frame, fr.matches, self.camera, flow_cfg)
            yield fr.proposals, fr.depth, flow

    def gt_tubes(self):
        """
        One TubeTrack per object over the frames where it is visible
        """
        masks = { obj.id: {} for obj in self.objects }
        positions = { obj.id: {} for obj in self.objects }
        for t in range(self.num_frames):
            for entry in self.ground_truth(t):
                masks[entry.object_id][t] = entry.mask
                positions[entry.object_id][t] = entry.position
        tracks = []
        for obj in self.objects:
            if masks[obj.id]:
                tracks.append(TubeTrack(obj.id, masks[obj.id], positions[obj.id],
                    known=obj.known, category=obj.category))
        return tracks

def _views_apart(a, b, gap):
    if gap is None:
        return True
    both = ~(np.isnan(a[:, 0]) | np.isnan(b[:, 0]))
    a, b = a[both], b[both]
    return bool(np.all((a[:, 1] + gap < b[:, 0]) | (b[:, 1] + gap < a[:, 0])))

def _footprint_gap(pos, size, layout):
    # gap between two xz footprints; negative when they overlap
    other_pos = np.asarray(layout['position'])
    other_size = np.asarray(layout['size'])
    gap_x = abs(pos[0] - other_pos[0]) - (size[0] + other_size[0]) / 2
    gap_z = abs(pos[1] - other_pos[1]) - (size[2] + other_size[2]) / 2
    return max(gap_x, gap_z)

def generate(config=None):
    """
    Build the synthetic world for {config}.  Raises DataError for configs
    that place an object behind the camera at frame 0.
    """
    config = config or SceneConfig()
    scene = SyntheticScene(config)
    logger.debug(f'generate: {scene}')
    return scene
