import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import multivariate_normal
from vtubes.config import TrackingConfig
from vtubes.error import NumericalError
from vtubes.geometry import RigidMotion
from vtubes.kalman import (KalmanState, initiate, kf_predict, kf_update,
        transition, process_noise, obs_noise,
        position_prediction, mahalanobis_sq, gaussian_logpdf, time_reversed)

def test_predict_constant_velocity():
    cfg = TrackingConfig()
    state = KalmanState(np.r_[0.0, 0, 10, 1, 0, 0], np.eye(6))
    pred = kf_predict(state, cfg)
    assert np.allclose(pred.mean, [1, 0, 10, 1, 0, 0])
    assert np.trace(pred.cov) > np.trace(state.cov)

def test_predict_applies_egomotion_after_displacement():
    cfg = TrackingConfig()
    state = KalmanState(np.r_[0.0, 0, 10, 1, 0, 0], np.eye(6))
    # camera moves 1 m forward: points come 1 m closer
    ego = RigidMotion.translation_only([0.0, 0.0, -1.0])
    pred = kf_predict(state, cfg, ego)
    assert np.allclose(pred.position, [1, 0, 9])
    assert np.allclose(pred.velocity, [1, 0, 0])

@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6), st.booleans())
def test_update_keeps_covariance_symmetric_pd(obs, position_only):
    cfg = TrackingConfig()
    state = kf_predict(initiate([0.0, 0, 10], [0.0, 0, 0], cfg), cfg)
    post = kf_update(state, obs, cfg, position_only)
    post.check()
    assert np.trace(post.cov) < np.trace(state.cov)

def test_update_position_only_keeps_velocity_uncertain():
    cfg = TrackingConfig()
    state = kf_predict(initiate([0.0, 0, 10], [0.0, 0, 0], cfg), cfg)
    full = kf_update(state, np.r_[0.0, 0, 10, 1, 0, 0], cfg)
    pos = kf_update(state, np.r_[0.0, 0, 10, 1, 0, 0], cfg, position_only=True)
    assert np.trace(pos.cov[3:, 3:]) > np.trace(full.cov[3:, 3:])
    assert np.allclose(pos.velocity, 0.0)

def test_check_rejects_non_pd():
    with pytest.raises(NumericalError):
        KalmanState(np.zeros(6), -np.eye(6))
    cov = np.eye(6)
    cov[0, 1] = 0.5
    with pytest.raises(NumericalError):
        KalmanState(np.zeros(6), cov)

def test_position_prediction_is_the_position_marginal():
    state = KalmanState(np.r_[1.0, 2, 3, 0, 0, 0], np.eye(6) * 0.5)
    mean, cov = position_prediction(state, TrackingConfig())
    assert np.allclose(mean, [1, 2, 3])
    assert np.allclose(cov, np.eye(3) * 0.5)
    cfg = TrackingConfig(gate_obs_noise=True)
    mean, cov = position_prediction(state, cfg)
    assert np.allclose(cov, np.eye(3) * (0.5 + cfg.sigma_pos_obs ** 2))

def test_logpdf_matches_scipy():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    cov = A @ A.T + np.eye(3)
    mean = rng.normal(size=3)
    x = rng.normal(size=3)
    expect = multivariate_normal(mean, cov).logpdf(x)
    assert gaussian_logpdf(x, mean, cov) == pytest.approx(expect, rel=1e-10)
    d2 = mahalanobis_sq(x, mean, cov)
    assert d2 == pytest.approx((x - mean) @ np.linalg.solve(cov, x - mean))
    assert mahalanobis_sq(np.stack([x, mean]), mean, cov)[1] == 0.0

def test_time_reversed_is_an_involution():
    cfg = TrackingConfig()
    state = kf_predict(initiate([1.0, 0, 10], [0.5, 0, -0.2], cfg), cfg)
    rev = time_reversed(state)
    assert np.allclose(rev.velocity, -state.velocity)
    assert np.allclose(rev.position, state.position)
    back = time_reversed(rev)
    assert np.allclose(back.mean, state.mean)
    assert np.allclose(back.cov, state.cov)

@pytest.mark.parametrize('k', [1, 3, 10])
def test_k_step_prediction_closed_form(k):
    cfg = TrackingConfig()
    rng = np.random.default_rng(k)
    A = rng.normal(size=(6, 6))
    state = KalmanState(rng.normal(size=6), A @ A.T + np.eye(6))
    ego = RigidMotion.from_rotvec([0.0, 0.02, 0.0], [0.1, 0.0, -0.5])
    F, b = transition(ego)
    Q = process_noise(cfg)
    pred = state
    for _ in range(k):
        pred = kf_predict(pred, cfg, ego)
    Fk = np.linalg.matrix_power(F, k)
    mean = Fk @ state.mean + sum(np.linalg.matrix_power(F, j) @ b for j in range(k))
    cov = Fk @ state.cov @ Fk.T + sum(np.linalg.matrix_power(F, j) @ Q @
            np.linalg.matrix_power(F, j).T for j in range(k))
    assert np.allclose(pred.mean, mean, atol=1e-9)
    assert np.allclose(pred.cov, cov, atol=1e-9)

def test_velocity_converges_on_noiseless_observations():
    cfg = TrackingConfig(sigma_pos_obs=0.05, sigma_vel_obs=0.05)
    p0, v = np.array([1.0, 0.5, 12.0]), np.array([0.5, 0.0, -0.3])
    state = initiate(p0, np.zeros(3), cfg)
    for t in range(1, 21):
        state = kf_update(kf_predict(state, cfg), np.r_[p0 + t * v, v], cfg)
    assert np.abs(state.velocity - v).max() < 1e-3

def test_huge_observation_noise_leaves_the_prediction():
    cfg = TrackingConfig(sigma_pos_obs=1e6, sigma_vel_obs=1e6)
    state = kf_predict(initiate([1.0, 0, 10], [0.2, 0, 0], TrackingConfig()), cfg)
    post = kf_update(state, np.r_[50.0, -20, 3, 4, 4, 4], cfg)
    assert np.allclose(post.mean, state.mean, atol=1e-6)
    assert np.allclose(post.cov, state.cov, atol=1e-6)

def test_update_matches_batch_least_squares():
    # without process noise the filter is a recursive weighted least squares
    # over the initial state
    cfg = TrackingConfig(sigma_pos_process=0.0, sigma_vel_process=0.0)
    rng = np.random.default_rng(7)
    state = initiate([0.0, 0.5, 10.0], [0.1, 0.0, 0.2], cfg)
    prior_mean, prior_cov = state.mean.copy(), state.cov.copy()
    F, _ = transition()
    R_inv = np.linalg.inv(obs_noise(cfg))
    info = np.linalg.inv(prior_cov)
    vec = info @ prior_mean
    n = 12
    for t in range(1, n + 1):
        z = np.r_[0.3 * t, 0.5, 10.0 + 0.1 * t, 0.3, 0.0, 0.1] + rng.normal(0, 0.2, 6)
        state = kf_update(kf_predict(state, cfg), z, cfg)
        Ft = np.linalg.matrix_power(F, t)
        info += Ft.T @ R_inv @ Ft
        vec += Ft.T @ R_inv @ z
    x0 = np.linalg.solve(info, vec)
    Fn = np.linalg.matrix_power(F, n)
    assert np.allclose(state.mean, Fn @ x0, atol=1e-6)
    assert np.allclose(state.cov, Fn @ np.linalg.inv(info) @ Fn.T, atol=1e-6)

def test_covariance_stays_pd_over_many_cycles():
    cfg = TrackingConfig()
    rng = np.random.default_rng(11)
    state = initiate([0.0, 0, 10], [0.0, 0, 0], cfg)
    for i in range(10000):
        ego = RigidMotion.from_rotvec(rng.normal(0, 0.01, 3), rng.normal(0, 0.2, 3))
        state = kf_predict(state, cfg, ego)
        if i % 4 != 3:
            obs = np.r_[state.position, state.velocity] + rng.normal(0, 0.3, 6)
            state = kf_update(state, obs, cfg, position_only=bool(i % 3 == 0))
        state.check()
