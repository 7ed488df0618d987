import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from vtubes.error import DataError
from vtubes.mask import BitMask, mask_iou, box_iou

masks = hnp.arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12)))

@given(masks)
def test_rle_round_trip(bits):
    m = BitMask(bits)
    counts = m.to_rle()
    assert sum(counts) == bits.size
    assert BitMask.from_rle(counts, m.width, m.height) == m

def test_rle_starts_with_zero_run():
    m = BitMask(np.ones((2, 3), dtype=bool))
    assert m.to_rle() == [0, 6]
    assert BitMask.empty(3, 2).to_rle() == [6]

def test_rle_wrong_total():
    with pytest.raises(DataError):
        BitMask.from_rle([3, 2], 3, 2)
    with pytest.raises(DataError):
        BitMask.from_rle([7, -1], 3, 2)

def test_iou_values():
    a = BitMask.from_box(10, 10, 0, 0, 4, 4)
    b = BitMask.from_box(10, 10, 2, 0, 6, 4)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, b) == pytest.approx(8 / 24)
    assert mask_iou(a, BitMask.from_box(10, 10, 5, 5, 8, 8)) == 0.0
    assert mask_iou(BitMask.empty(10, 10), BitMask.empty(10, 10)) == 0.0

@given(masks, st.data())
def test_iou_symmetric_and_bounded(bits, data):
    other = data.draw(hnp.arrays(bool, bits.shape))
    a, b = BitMask(bits), BitMask(other)
    iou = mask_iou(a, b)
    assert 0.0 <= iou <= 1.0
    assert iou == mask_iou(b, a)

def test_iou_dimension_mismatch():
    with pytest.raises(DataError):
        mask_iou(BitMask.empty(3, 3), BitMask.empty(4, 3))

def test_box_iou_of_l_shape():
    bits = np.zeros((10, 10), dtype=bool)
    bits[0:4, 0] = True
    bits[3, 0:4] = True
    a = BitMask(bits)
    assert a.bbox() == (0, 0, 4, 4)
    assert box_iou(a, BitMask.from_box(10, 10, 0, 0, 4, 4)) == 1.0
    assert mask_iou(a, BitMask.from_box(10, 10, 0, 0, 4, 4)) == pytest.approx(7 / 16)

def test_shifted_drops_pixels_leaving_the_image():
    a = BitMask.from_box(6, 4, 0, 0, 3, 2)
    b = a.shifted(4, 1)
    assert b == BitMask.from_box(6, 4, 4, 1, 6, 3)
    assert a.shifted(0, 0) == a
    assert a.shifted(-5, 0).is_empty()

def test_centroid_and_empty_bbox():
    assert BitMask.empty(4, 4).bbox() is None
    assert BitMask.empty(4, 4).centroid() is None
    c = BitMask.from_box(10, 10, 2, 4, 4, 6).centroid()
    assert c.tolist() == [2.5, 4.5]
