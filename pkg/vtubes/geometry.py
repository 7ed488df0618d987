import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation
from .error import DataError, GeometryError
from .mask import BitMask

"""
Pinhole stereo camera model, rigid motions and depth maps, plus the
mask-warping predictor that carries a tube's last mask into the next frame.

Camera coordinates: x right, y down, z forward (meters).  Pixel coordinates
(u, v) refer to pixel centers, so pixel (col, row) sits at u = col, v = row.
"""

ORTHO_TOL = 1e-9

class CameraIntrinsics(object):
    """
    Rectified stereo pinhole camera.  The right camera sits {baseline} meters
    along +x of the left one.
    """
    def __init__(self, fx, fy, cx, cy, baseline, width, height):
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.baseline = float(baseline)
        self.width = int(width)
        self.height = int(height)
        if min(self.fx, self.fy, self.baseline) <= 0:
            raise DataError(
                f'{type(self).__qualname__}: fx, fy and baseline must be > 0. '
                f'Got fx={fx}, fy={fy}, baseline={baseline}')
        if self.width <= 0 or self.height <= 0:
            raise DataError(
                f'{type(self).__qualname__}: image size must be positive, got '
                f'{width}x{height}')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError(
                f'{type(self).__qualname__}: principal point ({cx}, {cy}) lies '
                f'outside the {width}x{height} image')

    def __repr__(self):
        return (f'{type(self).__qualname__}(fx={self.fx}, fy={self.fy}, '
                f'cx={self.cx}, cy={self.cy}, baseline={self.baseline}, '
                f'{self.width}x{self.height})')

    def __eq__(self, other):
        if not isinstance(other, CameraIntrinsics):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self):
        return { 'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
                'baseline': self.baseline, 'width': self.width,
                'height': self.height }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d['fx'], d['fy'], d['cx'], d['cy'], d['baseline'],
                    d['width'], d['height'])
        except KeyError as ex:
            raise DataError(f'{cls.__qualname__}: missing field {ex}')

class RigidMotion(object):
    """
    x -> rotation @ x + translation.  compose(a, b) applies b first.
    """
    def __init__(self, rotation, translation, check=True):
        self.rotation = np.array(rotation, dtype=float).reshape(3, 3)
        self.translation = np.array(translation, dtype=float).reshape(3)
        if check:
            err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
            det = np.linalg.det(self.rotation)
            if err > ORTHO_TOL or det <= 0:
                raise DataError(
                    f'{type(self).__qualname__}: rotation is not a proper '
                    f'orthonormal matrix (|R R^T - I| = {err:.3g}, '
                    f'det = {det:.6f})')

    def __repr__(self):
        rv = self.rotvec
        return (f'{type(self).__qualname__}(rotvec={np.round(rv, 6).tolist()}, '
                f't={np.round(self.translation, 6).tolist()})')

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), check=False)

    @classmethod
    def from_rotvec(cls, rotvec, translation):
        rot = Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()
        return cls(rot, translation, check=False)

    @classmethod
    def translation_only(cls, translation):
        return cls(np.eye(3), translation, check=False)

    @property
    def rotvec(self):
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def apply(self, points):
        """
        Transform a 3-vector or an (N, 3) array of points
        """
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_vector(self, vecs):
        """
        Rotate direction vectors (no translation)
        """
        return np.asarray(vecs, dtype=float) @ self.rotation.T

    def compose(self, other):
        """
        The motion applying {other} first, then self
        """
        rot = self.rotation @ other.rotation
        trans = self.rotation @ other.translation + self.translation
        return RigidMotion(rot, trans, check=False)

    def inverse(self):
        rt = self.rotation.T
        return RigidMotion(rt, -rt @ self.translation, check=False)

    def is_identity(self, tol=1e-12):
        return (np.abs(self.rotation - np.eye(3)).max() <= tol and
                np.abs(self.translation).max() <= tol)

    def distance(self, other):
        """
        (rotation angle in radians, translation distance in meters) between
        two motions
        """
        rel = self.inverse().compose(other)
        angle = float(np.linalg.norm(rel.rotvec))
        trans = float(np.linalg.norm(self.translation - other.translation))
        return angle, trans

    def to_dict(self):
        return { 'rotation': self.rotation.tolist(),
                'translation': self.translation.tolist() }

    @classmethod
    def from_dict(cls, d):
        return cls(d['rotation'], d['translation'])

def compose(*motions):
    """
    compose(a, b, c) applies c, then b, then a
    """
    out = RigidMotion.identity()
    for m in motions:
        out = out.compose(m)
    return out

class DepthMap(object):
    """
    Per-pixel depth in meters, float32, NaN marks invalid pixels
    """
    def __init__(self, values):
        values = np.array(values, dtype=np.float32)
        if values.ndim != 2:
            raise DataError(
                f'{type(self).__qualname__}: expected a 2D array, got shape '
                f'{values.shape}')
        finite = np.isfinite(values)
        if np.isinf(values).any() or (values[finite] <= 0).any():
            raise DataError(
                f'{type(self).__qualname__}: valid depth values must be finite '
                f'and strictly positive; use NaN for invalid pixels')
        self.values = values
        self.valid = finite

    def __repr__(self):
        return (f'{type(self).__qualname__}({self.width}x{self.height}, '
                f'valid={int(self.valid.sum())})')

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    def check_camera(self, K):
        if (self.width, self.height) != (K.width, K.height):
            raise DataError(
                f'{type(self).__qualname__}: depth map is {self.width}x'
                f'{self.height} but camera is {K.width}x{K.height}')

def project(point, K):
    """
    Project a 3-vector or (N, 3) array of camera-frame points to continuous
    pixel coordinates.  Results may lie outside the image.
    """
    pts = np.asarray(point, dtype=float)
    z = pts[..., 2]
    if np.any(~(z > 0)):
        raise GeometryError(
            f'project: point(s) with depth <= 0 are not projectable')
    u = K.fx * pts[..., 0] / z + K.cx
    v = K.fy * pts[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)

def backproject(pixel, depth, K):
    """
    Inverse of project.  For a single pixel returns a 3-vector, or None when
    {depth} is the invalid marker (NaN).  For (N, 2) pixels and N depths,
    returns the (M, 3) points of the pixels with valid depth.
    """
    pix = np.asarray(pixel, dtype=float)
    d = np.asarray(depth, dtype=float)
    finite = np.isfinite(d)
    if np.any(d[finite] <= 0):
        raise GeometryError(f'backproject: depth must be > 0')
    if pix.ndim == 1:
        if not finite:
            return None
        return np.array([(pix[0] - K.cx) * d / K.fx,
                         (pix[1] - K.cy) * d / K.fy,
                         float(d)])
    pix, d = pix[finite], d[finite]
    x = (pix[:, 0] - K.cx) * d / K.fx
    y = (pix[:, 1] - K.cy) * d / K.fy
    return np.stack([x, y, d], axis=-1)

def mask_points(mask, depth, K):
    """
    Backproject every set pixel of {mask} that has valid depth.
    Returns (points (N, 3), pixel columns, pixel rows)
    """
    if mask.shape != depth.values.shape:
        raise DataError(
            f'mask is {mask.width}x{mask.height} but depth map is '
            f'{depth.width}x{depth.height}')
    rows, cols = np.nonzero(mask.bits & depth.valid)
    d = depth.values[rows, cols].astype(float)
    pix = np.stack([cols, rows], axis=-1).astype(float)
    return backproject(pix.reshape(-1, 2), d, K), cols, rows

_CLOSING = np.ones((3, 3), dtype=bool)

def rasterize(pixels, K):
    """
    Splat continuous pixel coordinates to their nearest pixel, dropping those
    outside the image, then close holes with one 3x3 morphological closing
    """
    bits = np.zeros((K.height, K.width), dtype=bool)
    if len(pixels) > 0:
        pix = np.rint(pixels).astype(np.int64)
        inside = ((pix[:, 0] >= 0) & (pix[:, 0] < K.width) &
                  (pix[:, 1] >= 0) & (pix[:, 1] < K.height))
        pix = pix[inside]
        bits[pix[:, 1], pix[:, 0]] = True
    if bits.any():
        # erosion with border_value=1 keeps closing extensive at the borders
        grown = ndimage.binary_dilation(bits, structure=_CLOSING)
        bits = ndimage.binary_erosion(grown, structure=_CLOSING, border_value=1)
    return BitMask(bits)

def warp_mask(mask, depth, ego, obj_motion, K):
    """
    Predict where {mask} lands in the next frame: backproject the masked
    pixels with valid depth, move them by {obj_motion} (expressed in the
    mask's camera frame) and then by the camera egomotion {ego}, reproject and
    rasterize.  Pixels without valid depth contribute nothing.
    """
    depth.check_camera(K)
    pts, _, _ = mask_points(mask, depth, K)
    if len(pts) == 0:
        return BitMask.empty(K.width, K.height)
    moved = ego.compose(obj_motion).apply(pts)
    moved = moved[moved[:, 2] > 0]
    if len(moved) == 0:
        return BitMask.empty(K.width, K.height)
    return rasterize(project(moved, K), K)

