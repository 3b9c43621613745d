import numpy as np
import pytest

from crosscam.geometry import CameraModel, intrinsics
from crosscam.labels import PseudoLabel
from crosscam.simulator import SceneConfig, gen_scene, render_detections

NOISELESS = dict(jitter_sigma=0.0, miss_max=0.0, fp_rate=0.0)


def make_label(cam="cam0", frame=0, bbox=(0, 0, 10, 10), score=0.5, emb=None, gt=None, class_id=1):
    emb = np.array([1.0, 0.0]) if emb is None else np.asarray(emb, dtype=float)
    return PseudoLabel(cam, frame, bbox, score, class_id, emb, gt_identity=gt)


@pytest.fixture
def label():
    return make_label


@pytest.fixture(scope="session")
def default_scene():
    cfg = SceneConfig()
    gt, cams = gen_scene(cfg, 0)
    dets = render_detections(gt, cams, cfg, 0)
    return cfg, gt, cams, dets


@pytest.fixture(scope="session")
def noiseless_scene():
    cfg = SceneConfig(**NOISELESS)
    gt, cams = gen_scene(cfg, 0)
    dets = render_detections(gt, cams, cfg, 0)
    return cfg, gt, cams, dets


@pytest.fixture
def stereo_pair():
    """Identity intrinsics, second camera shifted one unit along x."""
    K = np.eye(3)
    a = CameraModel("a", K, np.eye(3), np.zeros(3), 100, 100)
    b = CameraModel("b", K, np.eye(3), np.array([1.0, 0.0, 0.0]), 100, 100)
    return a, b


@pytest.fixture
def pixel_stereo_pair():
    K = intrinsics(500.0, 640, 480)
    a = CameraModel("a", K, np.eye(3), np.zeros(3), 640, 480)
    b = CameraModel("b", K, np.eye(3), np.array([-0.5, 0.0, 0.0]), 640, 480)
    return a, b
