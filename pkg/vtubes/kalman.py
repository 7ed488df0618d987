import numpy as np
import scipy.linalg
from .error import NumericalError

"""
Linear Kalman filter over a 6-vector state (position in meters, velocity in
meters/frame), both expressed in the current camera frame.  The velocity is
the object's own displacement per frame (camera motion compensated), so a
prediction into the next frame applies the object displacement first and the
camera egomotion second:

    p' = R (p + v) + t
    v' = R v

which reduces to the plain constant-velocity model p' = p + v when the
camera is static.  Both position and velocity are observed directly.
"""

SYM_TOL = 1e-9

class KalmanState(object):
    __slots__ = ('mean', 'cov')

    def __init__(self, mean, cov, check=True):
        self.mean = np.array(mean, dtype=float).reshape(6)
        self.cov = np.array(cov, dtype=float).reshape(6, 6)
        if check:
            self.check()

    def __repr__(self):
        return (f'{type(self).__qualname__}(p={np.round(self.position, 4).tolist()}, '
                f'v={np.round(self.velocity, 4).tolist()}, '
                f'trace={np.trace(self.cov):.4g})')

    def check(self):
        asym = np.abs(self.cov - self.cov.T).max()
        if asym > SYM_TOL:
            raise NumericalError(
                f'{type(self).__qualname__}: covariance is not symmetric '
                f'(max asymmetry {asym:.3g})')
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise NumericalError(
                f'{type(self).__qualname__}: covariance is not positive definite')

    @property
    def position(self):
        return self.mean[:3]

    @property
    def velocity(self):
        return self.mean[3:]

    @property
    def pos_cov(self):
        return self.cov[:3, :3]

    def to_dict(self):
        return { 'mean': self.mean.tolist(), 'cov': self.cov.tolist() }

    @classmethod
    def from_dict(cls, d):
        return cls(d['mean'], d['cov'])

def process_noise(cfg):
    q = np.r_[[cfg.sigma_pos_process ** 2] * 3, [cfg.sigma_vel_process ** 2] * 3]
    return np.diag(q)

def obs_noise(cfg):
    r = np.r_[[cfg.sigma_pos_obs ** 2] * 3, [cfg.sigma_vel_obs ** 2] * 3]
    return np.diag(r)

def transition(ego=None):
    """
    State transition matrix F and offset b of x' = F x + b
    """
    if ego is None:
        rot, trans = np.eye(3), np.zeros(3)
    else:
        rot, trans = ego.rotation, ego.translation
    F = np.zeros((6, 6))
    F[:3, :3] = rot
    F[:3, 3:] = rot
    F[3:, 3:] = rot
    return F, np.r_[trans, np.zeros(3)]

def initiate(position, velocity, cfg):
    """
    New state from a single observation.  The velocity variance is inflated
    by cfg.seed_vel_inflation since scene flow under a fresh mask is a weak
    estimate.
    """
    mean = np.r_[position, velocity]
    var = np.r_[[cfg.sigma_pos_obs ** 2] * 3,
                [cfg.sigma_vel_obs ** 2 * cfg.seed_vel_inflation] * 3]
    return KalmanState(mean, np.diag(var), check=False)

def kf_predict(state, cfg, ego=None):
    """
    Constant-velocity prediction with additive process noise.  {ego} maps the
    current camera frame into the next one (None means a static camera).
    """
    F, b = transition(ego)
    mean = F @ state.mean + b
    cov = F @ state.cov @ F.T + process_noise(cfg)
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, cov, check=False)

def kf_update(state, observation, cfg, position_only=False):
    """
    Linear-Gaussian update observing full position and velocity, with the
    Joseph-form covariance update to keep the covariance symmetric PD.
    With {position_only}, only the first three observation entries are used
    (a proposal without scene flow has no velocity measurement).
    """
    z = np.asarray(observation, dtype=float).reshape(6)
    R = obs_noise(cfg)
    H = np.eye(6)
    if position_only:
        H, R, z = H[:3], R[:3, :3], z[:3]
    S = H @ state.cov @ H.T + R
    try:
        chol = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f'kf_update: innovation covariance is not positive definite')
    gain = scipy.linalg.cho_solve(chol, H @ state.cov, check_finite=False).T
    innovation = z - H @ state.mean
    mean = state.mean + gain @ innovation
    I_K = np.eye(6) - gain @ H
    cov = I_K @ state.cov @ I_K.T + gain @ R @ gain.T
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, cov, check=False)

def position_prediction(state, cfg):
    """
    The predicted position marginal of {state}: (mean, covariance).  With
    cfg.gate_obs_noise the position observation noise is added, giving the
    predictive distribution of a position measurement.
    """
    cov = state.pos_cov.copy()
    if cfg.gate_obs_noise:
        cov += np.eye(3) * cfg.sigma_pos_obs ** 2
    return state.position.copy(), cov

def mahalanobis_sq(points, mean, cov):
    """
    Squared Mahalanobis distances of a point or (N, d) points from a Gaussian
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts - mean
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(f'mahalanobis_sq: covariance is not positive definite')
    z = scipy.linalg.solve_triangular(chol, d.T, lower=True, check_finite=False)
    dist = np.sum(z * z, axis=0)
    if np.ndim(points) == 1:
        return float(dist[0])
    return dist

def gaussian_logpdf(point, mean, cov):
    """
    ln N(point; mean, cov)
    """
    k = len(mean)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(f'gaussian_logpdf: covariance is not positive definite')
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    z = scipy.linalg.solve_triangular(chol, np.asarray(point) - mean, lower=True,
            check_finite=False)
    return float(-0.5 * (k * np.log(2 * np.pi) + logdet + z @ z))

def time_reversed(state):
    """
    The same state with its velocity negated, for filtering backward in time
    """
    mean = state.mean.copy()
    mean[3:] *= -1
    flip = np.diag([1.0, 1, 1, -1, -1, -1])
    return KalmanState(mean, flip @ state.cov @ flip, check=False)

