import numpy as np
import pytest
from vtubes.geometry import CameraIntrinsics, DepthMap
from vtubes.mask import BitMask
from vtubes.proposals import FrameProposal, NUM_CLASSES, Localization
from vtubes.synth import SceneConfig, class_posterior

@pytest.fixture
def camera():
    return CameraIntrinsics(180.0, 180.0, 160.0, 60.0, 0.54, 320, 120)

def plane_depth(K, z):
    return DepthMap(np.full((K.height, K.width), z, dtype=np.float32))

def make_proposal(frame, mask, position, velocity=(0.0, 0.0, 0.0),
        objectness=0.9, index=0, has_flow=True):
    prop = FrameProposal(frame, mask, objectness, class_posterior(3), index)
    prop.set_localization(Localization(np.asarray(position, dtype=float),
        np.asarray(velocity, dtype=float), np.ones(3), True, has_flow, 100))
    return prop

def quiet_scene(**kwargs):
    """
    A noiseless scene config: no clutter, drops, jitter or outliers
    """
    opts = dict(frames=12, clutter_rate=0, drop_prob=0.0, mask_jitter_px=0.0,
            match_noise_px=0.0, outlier_fraction=0.0, disparity_noise_px=0.0,
            trajectory_noise=0.0)
    opts.update(kwargs)
    return SceneConfig(**opts)

ONE_OBJECT = [{ 'position': [1.0, 15.0], 'velocity': [0.05, 0.05],
    'size': [1.6, 1.5, 3.0], 'known': True }]
