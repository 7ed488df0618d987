import numpy as np
from .error import DataError

"""
Binary masks and their run-length encoding.

The RLE is a list of counts of alternating 0/1 runs over the row-major
flattened mask, always starting with a 0-run (which may have length zero).
"""

class BitMask(object):
    """
    A binary occupancy mask of shape (height, width)
    """
    __slots__ = ('bits', '_area')

    def __init__(self, bits):
        bits = np.asarray(bits)
        if bits.ndim != 2 or bits.shape[0] <= 0 or bits.shape[1] <= 0:
            raise DataError(
                f'{type(self).__qualname__}: expected a non-empty 2D array, '
                f'got shape {bits.shape}')
        self.bits = bits.astype(bool, copy=False)
        self._area = None

    def __repr__(self):
        return (f'{type(self).__qualname__}({self.width}x{self.height}, '
                f'area={self.area})')

    def __eq__(self, other):
        if not isinstance(other, BitMask):
            return NotImplemented
        return (self.bits.shape == other.bits.shape and
                bool(np.array_equal(self.bits, other.bits)))

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def shape(self):
        return self.bits.shape

    @property
    def area(self):
        if self._area is None:
            self._area = int(np.count_nonzero(self.bits))
        return self._area

    def is_empty(self):
        return self.area == 0

    @classmethod
    def empty(cls, width, height):
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_box(cls, width, height, x0, y0, x1, y1):
        """
        Mask with pixels x0 <= x < x1, y0 <= y < y1 set (clipped to the image)
        """
        bits = np.zeros((height, width), dtype=bool)
        x0, x1 = max(0, int(x0)), min(width, int(x1))
        y0, y1 = max(0, int(y0)), min(height, int(y1))
        if x1 > x0 and y1 > y0:
            bits[y0:y1, x0:x1] = True
        return cls(bits)

    def to_rle(self):
        flat = self.bits.ravel().astype(np.int8)
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        counts = np.diff(bounds).tolist()
        if flat[0] == 1:
            counts = [0] + counts
        return counts

    @classmethod
    def from_rle(cls, counts, width, height):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise DataError(
                f'{cls.__qualname__}: RLE counts must be a flat list of '
                f'nonnegative integers')
        total = int(counts.sum())
        if total != width * height:
            raise DataError(
                f'{cls.__qualname__}: RLE counts sum to {total} but mask is '
                f'{width}x{height} = {width * height} pixels')
        values = np.arange(counts.size) % 2 == 1
        flat = np.repeat(values, counts)
        return cls(flat.reshape(height, width))

    def bbox(self):
        """
        (x0, y0, x1, y1) half-open bounding box of the set pixels, or None
        """
        if self.is_empty():
            return None
        ys = np.flatnonzero(self.bits.any(axis=1))
        xs = np.flatnonzero(self.bits.any(axis=0))
        return int(xs[0]), int(ys[0]), int(xs[-1]) + 1, int(ys[-1]) + 1

    def centroid(self):
        if self.is_empty():
            return None
        ys, xs = np.nonzero(self.bits)
        return np.array([xs.mean(), ys.mean()])

    def shifted(self, dx, dy):
        """
        Translate the mask by integer pixel offsets; pixels leaving the image
        are dropped
        """
        out = np.zeros_like(self.bits)
        h, w = self.bits.shape
        sx0, sx1 = max(0, -dx), min(w, w - dx)
        sy0, sy1 = max(0, -dy), min(h, h - dy)
        if sx1 > sx0 and sy1 > sy0:
            out[sy0 + dy:sy1 + dy, sx0 + dx:sx1 + dx] = self.bits[sy0:sy1, sx0:sx1]
        return BitMask(out)

def _check_dims(a, b):
    if a.shape != b.shape:
        raise DataError(
            f'mask dimensions differ: {a.width}x{a.height} vs '
            f'{b.width}x{b.height}')

def mask_iou(a, b):
    """
    |a & b| / |a | b|, defined as 0 when both masks are empty
    """
    _check_dims(a, b)
    inter = np.count_nonzero(a.bits & b.bits)
    if inter == 0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union

def box_iou(a, b):
    """
    IoU of the bounding boxes of two masks, 0 if either is empty
    """
    _check_dims(a, b)
    ba, bb = a.bbox(), b.bbox()
    if ba is None or bb is None:
        return 0.0
    ix = max(0, min(ba[2], bb[2]) - max(ba[0], bb[0]))
    iy = max(0, min(ba[3], bb[3]) - max(ba[1], bb[1]))
    inter = ix * iy
    if inter == 0:
        return 0.0
    area_a = (ba[2] - ba[0]) * (ba[3] - ba[1])
    area_b = (bb[2] - bb[0]) * (bb[3] - bb[1])
    return inter / (area_a + area_b - inter)

