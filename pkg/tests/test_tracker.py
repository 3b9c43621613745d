import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_label
from crosscam.labels import by_frame
from crosscam.tracker import DEFAULT_HORIZON, Tracklet, predict, step, track_n


def test_predict_single_box():
    assert predict([(0, 0, 4, 4)]) == (0, 0, 4, 4)


def test_predict_constant_velocity():
    # centers (10,10) -> (12,10), size 4x4
    out = predict([(8, 8, 12, 12), (10, 8, 14, 12)])
    assert out == (12, 8, 16, 12)


def test_predict_stationary():
    assert predict([(1, 2, 3, 4), (1, 2, 3, 4)]) == (1, 2, 3, 4)


def test_predict_needs_a_box():
    with pytest.raises(ValueError):
        predict([])


def test_step_appends_matching_detection():
    t = Tracklet.from_seed(make_label(bbox=(0, 0, 10, 10), gt=3))
    step(t, [make_label(frame=1, bbox=(0, 0, 10, 10), emb=[0, 1], gt=3)], 0.3)
    assert t.observed == [True, True] and t.gt_ids == [3, 3]
    assert np.array_equal(t.embeddings[-1], [0, 1])


def test_step_without_detections_predicts():
    t = Tracklet.from_seed(make_label(bbox=(0, 0, 10, 10), emb=[0.6, 0.8]))
    step(t, [], 0.3)
    assert t.boxes[-1] == (0, 0, 10, 10) and t.observed == [True, False]
    assert np.array_equal(t.embeddings[-1], [0.6, 0.8])


def test_step_rejects_low_iou():
    t = Tracklet.from_seed(make_label(bbox=(0, 0, 10, 10)))
    step(t, [make_label(frame=1, bbox=(8, 8, 18, 18))], 0.3)
    assert t.observed[-1] is False


def test_tie_goes_to_lowest_index():
    t = Tracklet.from_seed(make_label(bbox=(0, 0, 10, 10)))
    a = make_label(frame=1, bbox=(1, 0, 11, 10), gt=1)
    b = make_label(frame=1, bbox=(-1, 0, 9, 10), gt=2)
    step(t, [a, b], 0.3)
    assert t.gt_ids[-1] == 1
    t = Tracklet.from_seed(make_label(bbox=(0, 0, 10, 10)))
    step(t, [b, a], 0.3)
    assert t.gt_ids[-1] == 2


def test_step_is_camera_local():
    t = Tracklet.from_seed(make_label(cam="cam0"))
    with pytest.raises(ValueError):
        step(t, [make_label(cam="cam1", frame=1)], 0.3)


def test_horizon_default():
    assert DEFAULT_HORIZON == 4


def test_track_zero_steps():
    t = track_n(make_label(), {}, n=0)
    assert len(t) == 1 and t.observed == [True]


def test_empty_frames_keep_seed():
    seed = make_label(bbox=(5, 5, 9, 9))
    t = track_n(seed, {}, n=4)
    assert t.boxes == [(5.0, 5.0, 9.0, 9.0)] * 5
    assert t.observed == [True, False, False, False, False]


def test_list_frames_by_offset():
    seed = make_label(frame=10, bbox=(0, 0, 10, 10))
    frames = [[make_label(frame=11, bbox=(1, 0, 11, 10))], [], [make_label(frame=13, bbox=(3, 0, 13, 10))]]
    t = track_n(seed, frames, n=4)
    assert t.observed == [True, True, False, True, False]
    assert t.next_frame == 15


@given(st.integers(0, 8), st.lists(st.integers(0, 3), min_size=8, max_size=8))
def test_length_and_flags(n, counts):
    seed = make_label(frame=0, bbox=(100, 100, 120, 140))
    frames = {f + 1: [make_label(frame=f + 1, bbox=(100 + f + k * 40, 100, 120 + f + k * 40, 140)) for k in range(c)]
              for f, c in enumerate(counts)}
    t = track_n(seed, frames, n=n)
    assert len(t.boxes) == len(t.embeddings) == len(t.observed) == n + 1
    assert t.observed[0]
    for k in range(1, n + 1):
        if not frames[k]:
            assert not t.observed[k]


def test_roundtrip():
    t = track_n(make_label(gt=4), {}, n=2)
    back = Tracklet.from_dict(t.to_dict())
    assert back.boxes == t.boxes and back.observed == t.observed and back.gt_ids == t.gt_ids


def test_noiseless_tracks_follow_identity(noiseless_scene):
    _, _, _, dets = noiseless_scene
    seeds = followed = 0
    for cam, labels in dets.items():
        frames = by_frame(labels)
        for f in range(0, 190, 5):
            for d in frames.get(f, []):
                t = track_n(d, frames, n=4)
                seeds += 1
                followed += all(g == d.gt_identity for g, o in zip(t.gt_ids, t.observed) if o)
    assert seeds > 500
    assert followed / seeds >= 0.99
