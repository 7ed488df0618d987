import numpy as np
import pytest
from vtubes.config import FlowConfig
from vtubes.error import GeometryError, NumericalError
from vtubes.geometry import RigidMotion, project
from vtubes.sceneflow import (QuadMatch, cyclic_filter, triangulate,
        estimate_egomotion, compute_scene_flow, frame_flow)

def stereo_pixels(points, K):
    offset = np.array([K.baseline, 0.0, 0.0])
    return project(points, K), project(points - offset, K)

def quads(prev_points, cur_points, K, frame=1):
    lp, rp = stereo_pixels(prev_points, K)
    lc, rc = stereo_pixels(cur_points, K)
    return [QuadMatch(frame, *px) for px in zip(lp, rp, lc, rc)]

def random_points(rng, n):
    return np.stack([rng.uniform(-5, 5, n), rng.uniform(-1, 1.5, n),
        rng.uniform(5, 40, n)], axis=-1)

def test_triangulate_round_trip(camera):
    pts = random_points(np.random.default_rng(0), 50)
    lp, rp = stereo_pixels(pts, camera)
    assert np.allclose(triangulate(lp, rp, camera), pts, rtol=1e-10)

def test_triangulate_rejects_non_positive_disparity(camera):
    with pytest.raises(GeometryError):
        triangulate([100.0, 50.0], [100.0, 50.0], camera)

def test_cyclic_filter(camera):
    good = QuadMatch(1, [100, 50], [90, 50], [101, 50], [91, 50.5])
    bad_row = QuadMatch(1, [100, 50], [90, 53], [101, 50], [91, 50])
    bad_cycle = QuadMatch(1, [100, 50], [90, 50], [101, 50], [91, 50],
            left_prev_back=[104, 50])
    kept = cyclic_filter([good, bad_row, bad_cycle], 1.5, 2.0)
    assert kept == [good]
    with pytest.raises(GeometryError):
        cyclic_filter([good], 0.0, 2.0)

def test_egomotion_recovered_from_noiseless_matches(camera):
    rng = np.random.default_rng(1)
    truth = RigidMotion.from_rotvec([0.01, 0.02, -0.005], [0.1, -0.05, -1.0])
    X = random_points(rng, 200)
    matches = quads(X, truth.apply(X), camera)
    est = estimate_egomotion(matches, camera)
    angle, dist = est.distance(truth)
    assert angle < 1e-6 and dist < 1e-6

def test_egomotion_robust_to_outliers(camera):
    rng = np.random.default_rng(2)
    truth = RigidMotion.from_rotvec([0.0, 0.01, 0.0], [0.0, 0.0, -0.8])
    X = random_points(rng, 200)
    X[:3, 2] = [6.0, 7.0, 8.0]
    Y = truth.apply(X)
    Y[:3] += [1.0, 0.0, 0.0]
    est = estimate_egomotion(quads(X, Y, camera), camera)
    angle, dist = est.distance(truth)
    assert angle < 1e-6 and dist < 1e-6

def test_egomotion_degenerate(camera):
    X = np.array([[0.0, 0.0, z] for z in (5.0, 10.0, 15.0, 20.0)])
    with pytest.raises(NumericalError):
        estimate_egomotion(quads(X, X, camera), camera)
    with pytest.raises(NumericalError):
        estimate_egomotion([], camera)

def test_scene_flow_of_translating_object(camera):
    X = random_points(np.random.default_rng(4), 30)
    flows, dropped = compute_scene_flow(quads(X, X + [1.0, 0.0, 0.0], camera),
            camera)
    assert dropped == 0
    for f in flows:
        assert np.allclose(f.flow, [1.0, 0.0, 0.0], atol=1e-9)

def test_scene_flow_drops_non_triangulable(camera):
    m = QuadMatch(1, [100, 50], [100, 50], [101, 50], [91, 50])
    flows, dropped = compute_scene_flow([m], camera)
    assert flows == [] and dropped == 1

def test_frame_flow_falls_back_to_identity(camera):
    ff = frame_flow(0, [], camera)
    assert ff.ego.ok and ff.ego.motion.is_identity()
    ff = frame_flow(3, [], camera)
    assert not ff.ego.ok and ff.ego.motion.is_identity()
    assert ff.flows == []

def test_frame_flow_counts_filtered_matches(camera):
    X = random_points(np.random.default_rng(5), 40)
    matches = quads(X, X, camera, frame=2)
    matches.append(QuadMatch(2, [100, 50], [90, 55], [101, 50], [91, 50]))
    ff = frame_flow(2, matches, camera, FlowConfig())
    assert ff.ego.ok
    assert ff.dropped == 1
    assert len(ff.flows) == 40

def test_egomotion_under_pixel_noise(camera):
    errors = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        truth = RigidMotion.from_rotvec(rng.normal(0, 0.01, 3),
                [rng.normal(0, 0.05), rng.normal(0, 0.02), -rng.uniform(0.5, 1.5)])
        X = np.stack([rng.uniform(-5, 5, 200), rng.uniform(-1, 1.5, 200),
            rng.uniform(4, 20, 200)], axis=-1)
        matches = quads(X, truth.apply(X), camera)
        noisy = [QuadMatch(m.frame, *(np.asarray(px) + rng.normal(0, 0.2, 2)
            for px in m.pixels()))
            for m in matches]
        est = estimate_egomotion(noisy, camera)
        errors.append(est.distance(truth)[1])
    assert np.percentile(errors, 95) < 0.02
