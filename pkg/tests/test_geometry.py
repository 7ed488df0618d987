import numpy as np
import pytest
from hypothesis import given, strategies as st
from vtubes.error import DataError, GeometryError
from vtubes.geometry import (CameraIntrinsics, RigidMotion, DepthMap, compose,
        project, backproject, rasterize, warp_mask)
from vtubes.mask import BitMask
from conftest import plane_depth

coords = st.floats(-20, 20, allow_nan=False)

@given(coords, coords, st.floats(0.5, 80))
def test_project_backproject_round_trip(x, y, z):
    K = CameraIntrinsics(180.0, 180.0, 160.0, 60.0, 0.54, 320, 120)
    p = np.array([x, y, z])
    back = backproject(project(p, K), z, K)
    assert np.allclose(back, p, atol=1e-9 * max(1.0, abs(x), abs(y)))

def test_project_behind_camera(camera):
    with pytest.raises(GeometryError):
        project([0.0, 0.0, 0.0], camera)
    with pytest.raises(GeometryError):
        project(np.array([[0.0, 0.0, 1.0], [1.0, 1.0, -2.0]]), camera)

def test_backproject_invalid_depth(camera):
    assert backproject([10.0, 10.0], np.nan, camera) is None
    with pytest.raises(GeometryError):
        backproject([10.0, 10.0], -1.0, camera)

def test_camera_rejects_bad_values():
    with pytest.raises(DataError):
        CameraIntrinsics(0.0, 180.0, 160.0, 60.0, 0.54, 320, 120)
    with pytest.raises(DataError):
        CameraIntrinsics(180.0, 180.0, 400.0, 60.0, 0.54, 320, 120)

def test_rigid_motion_compose_order():
    rot = RigidMotion.from_rotvec([0.0, np.pi / 2, 0.0], [0.0, 0.0, 0.0])
    shift = RigidMotion.translation_only([1.0, 0.0, 0.0])
    # shift first, then rotate
    p = rot.compose(shift).apply([0.0, 0.0, 0.0])
    assert np.allclose(p, rot.apply([1.0, 0.0, 0.0]))
    assert np.allclose(compose(rot, shift).apply([0.0, 0.0, 0.0]), p)

@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3),
        st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_inverse(rotvec, trans):
    m = RigidMotion.from_rotvec(rotvec, trans)
    angle, dist = m.compose(m.inverse()).distance(RigidMotion.identity())
    assert angle < 1e-9 and dist < 1e-9

def test_rigid_motion_rejects_non_rotation():
    with pytest.raises(DataError):
        RigidMotion(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

def test_depth_map_validation():
    with pytest.raises(DataError):
        DepthMap(np.array([[1.0, 0.0]]))
    with pytest.raises(DataError):
        DepthMap(np.array([[1.0, np.inf]]))
    d = DepthMap(np.array([[1.0, np.nan]]))
    assert d.valid.tolist() == [[True, False]]

def test_rasterize_closing_fills_holes(camera):
    ys, xs = np.mgrid[20:30, 40:60]
    pix = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(float)
    pix = pix[(pix[:, 0] != 50) | (pix[:, 1] != 25)]
    m = rasterize(pix, camera)
    assert m == BitMask.from_box(camera.width, camera.height, 40, 20, 60, 30)

def test_warp_identity_is_exact(camera):
    mask = BitMask.from_box(camera.width, camera.height, 100, 30, 140, 70)
    ident = RigidMotion.identity()
    out = warp_mask(mask, plane_depth(camera, 12.0), ident, ident, camera)
    assert out == mask

def test_warp_lateral_translation(camera):
    # 1 m lateral motion at 10 m depth moves fx / 10 = 18 pixels
    mask = BitMask.from_box(camera.width, camera.height, 100, 30, 140, 70)
    ident = RigidMotion.identity()
    move = RigidMotion.translation_only([1.0, 0.0, 0.0])
    out = warp_mask(mask, plane_depth(camera, 10.0), ident, move, camera)
    assert out == mask.shifted(18, 0)
    # camera egomotion composes the same way
    out = warp_mask(mask, plane_depth(camera, 10.0), move, ident, camera)
    assert out == mask.shifted(18, 0)

def test_warp_without_depth_is_empty(camera):
    mask = BitMask.from_box(camera.width, camera.height, 100, 30, 140, 70)
    depth = DepthMap(np.full((camera.height, camera.width), np.nan))
    ident = RigidMotion.identity()
    assert warp_mask(mask, depth, ident, ident, camera).is_empty()

@pytest.mark.parametrize('dz', [-2.0, 2.0])
def test_warp_axial_translation_scales_about_principal_point(camera, dz):
    mask = BitMask.from_box(camera.width, camera.height, 150, 50, 171, 71)
    ident = RigidMotion.identity()
    move = RigidMotion.translation_only([0.0, 0.0, dz])
    out = warp_mask(mask, plane_depth(camera, 10.0), ident, move, camera)
    assert np.allclose(out.centroid(), [camera.cx, camera.cy], atol=0.5)
    scale = 10.0 / (10.0 + dz)
    assert out.area == pytest.approx(mask.area * scale ** 2, rel=0.15)

def test_warp_composed_motion_equals_sequential_warps(camera):
    mask = BitMask.from_box(camera.width, camera.height, 100, 30, 140, 70)
    depth = plane_depth(camera, 10.0)
    ident = RigidMotion.identity()
    m1 = RigidMotion.translation_only([0.5, 0.0, 0.0])
    m2 = RigidMotion.translation_only([0.0, 0.5, 0.0])
    step = warp_mask(warp_mask(mask, depth, ident, m1, camera), depth, ident, m2,
            camera)
    both = warp_mask(mask, depth, ident, m2.compose(m1), camera)
    assert step == both == mask.shifted(9, 9)
    # splitting the motion between camera and object gives the same mask
    assert warp_mask(mask, depth, m2, m1, camera) == both
