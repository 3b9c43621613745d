import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crosscam.errors import DegenerateBand, DegenerateGeometry, PointAtCameraCenter
from crosscam.geometry import (
    CameraModel, FundamentalMatrix, band_contains, bbox_epipolar_band, epipolar_line, epipolar_residual, epipole,
    fundamental_matrix, load_calibration, orient_lines, project_point, project_points, save_calibration, skew,
)
from crosscam.simulator import SceneConfig, ring_cameras

CAMS = ring_cameras(SceneConfig())
F01 = fundamental_matrix(CAMS[0], CAMS[1])

coord = st.floats(-1e3, 1e3, allow_nan=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)


def scene_points(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(-8, 8, n), rng.uniform(-8, 8, n), rng.uniform(0, 2, n)])


def test_skew_examples():
    assert np.array_equal(skew((1, 0, 0)), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])
    assert np.array_equal(skew((0, 0, 0)), np.zeros((3, 3)))


@given(vec3, vec3)
def test_skew_is_cross_product(t, v):
    M = skew(t)
    scale = 1.0 + np.linalg.norm(t) * np.linalg.norm(v)
    assert np.max(np.abs(M @ v - np.cross(t, v))) <= 1e-12 * scale
    assert np.array_equal(M, -M.T)


def test_identity_rig_reduces_to_skew(stereo_pair):
    F = fundamental_matrix(*stereo_pair).normalized
    S = skew((1, 0, 0))
    S = S / np.linalg.norm(S)
    assert np.allclose(F, S, atol=1e-15) or np.allclose(F, -S, atol=1e-15)


@pytest.mark.parametrize("i,j", [(0, 1), (1, 0), (0, 2), (2, 1)])
def test_rank_two(i, j):
    s = np.linalg.svd(fundamental_matrix(CAMS[i], CAMS[j]).F, compute_uv=False)
    assert s[2] < 1e-9 * s[0]
    assert s[1] > 1e-6 * s[0]


def test_residual_on_projected_points():
    P = scene_points(100)
    p0, _ = project_points(CAMS[0], P)
    p1, _ = project_points(CAMS[1], P)
    assert np.max(np.abs(epipolar_residual(F01, p0, p1))) < 1e-9


def test_transposed_convention_fails():
    # the residual picks out one mapping direction; the transpose is not a valid F for it
    P = scene_points(50)
    p0, _ = project_points(CAMS[0], P)
    p1, _ = project_points(CAMS[1], P)
    wrong = FundamentalMatrix(F01.F.T, "cam0", "cam1")
    assert np.max(np.abs(epipolar_residual(wrong, p0, p1))) > 1e-3


def test_shared_center_is_degenerate():
    a = CAMS[0]
    R = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]]) @ a.R
    b = CameraModel("b", a.K, R, -R @ a.center, a.width, a.height)
    with pytest.raises(DegenerateGeometry):
        fundamental_matrix(a, b)


def test_line_passes_through_correspondence():
    P = scene_points(200, seed=1)
    p0, _ = project_points(CAMS[0], P)
    p1, _ = project_points(CAMS[1], P)
    for a, b in zip(p0, p1):
        line = epipolar_line(F01, a)
        assert not line.degenerate
        assert abs(line.coeffs[0] ** 2 + line.coeffs[1] ** 2 - 1) < 1e-12
        assert abs(line.coeffs @ np.array([b[0], b[1], 1.0])) < 1e-6


def test_epipole_gives_null_line():
    e = epipole(F01)
    line = epipolar_line(F01, e[:2])
    assert line.degenerate
    assert np.hypot(*line.coeffs[:2]) < 1e-9 * np.linalg.norm(e)


def test_off_image_query_is_flagged():
    assert not epipolar_line(F01, (-50.0, 10.0)).in_bounds
    assert epipolar_line(F01, (10.0, 10.0)).in_bounds


def test_sliding_along_own_epipolar_line(pixel_stereo_pair):
    # horizontal baseline: epipolar lines are image rows
    F = fundamental_matrix(*pixel_stereo_pair)
    ref = epipolar_line(F, (100.0, 200.0)).coeffs
    for x in (0.0, 37.5, 320.0, 639.0):
        line = epipolar_line(F, (x, 200.0)).coeffs
        assert np.max(np.abs(line - ref)) < 1e-9


def _corr_box(P_center):
    """Boxes in cam0 and cam1 around the projections of a small cuboid."""
    offs = np.array([[dx, dy, dz] for dx in (-0.3, 0.3) for dy in (-0.3, 0.3) for dz in (0.0, 1.8)])
    boxes = []
    for cam in CAMS[:2]:
        px, _ = project_points(cam, P_center + offs)
        boxes.append((px[:, 0].min(), px[:, 1].min(), px[:, 0].max(), px[:, 1].max()))
    return boxes


def test_band_contains_corner_correspondence():
    P = np.array([1.0, -2.0, 0.0])
    box0, _ = _corr_box(P)
    band = bbox_epipolar_band(F01, box0, 0.0)
    for c in band.corners:
        # pick the 3D point on the viewing ray through the corner at the object's depth
        ray = np.linalg.inv(CAMS[0].K) @ np.array([c[0], c[1], 1.0])
        depth = (CAMS[0].R @ P + CAMS[0].t)[2]
        X = CAMS[0].R.T @ (ray * depth - CAMS[0].t)
        p1, _ = project_point(CAMS[1], X)
        assert band_contains(band, p1)


def test_band_contains_matching_center():
    for P in scene_points(30, seed=3):
        P[2] = 0.0
        box0, box1 = _corr_box(P)
        band = bbox_epipolar_band(F01, box0, 0.0)
        c = np.array([(box1[0] + box1[2]) / 2, (box1[1] + box1[3]) / 2])
        assert band_contains(band, c)


def test_band_rejects_far_point():
    band = bbox_epipolar_band(F01, (600, 300, 640, 400), 6.0)
    s = band.signed_distances((0.0, 0.0))
    far = (0.0, 0.0) if (s.min() > 6 or s.max() < -6) else None
    if far is None:
        # walk along the normal of line 0 until every line is well past epsilon
        n = band.lines[0, :2]
        far = np.array([640.0, 360.0]) + 1e5 * n
    assert not band_contains(band, far)


def test_point_on_band_line_is_contained():
    band = bbox_epipolar_band(F01, (600, 300, 640, 400), 0.0)
    for a, b, c in band.lines:
        # foot of the perpendicular from the origin
        p = np.array([-a * c, -b * c])
        assert band_contains(band, p)


def test_all_positive_distances_excluded():
    lines = orient_lines(np.array([[1.0, 0, -10], [1.0, 0, -20], [1.0, 0, -15], [1.0, 0, -12]]))
    from crosscam.geometry import EpipolarBand

    band = EpipolarBand(lines, 1.0)
    assert band.signed_distances((25.0, 0.0)).min() > 1.0
    assert not band_contains(band, (25.0, 0.0))
    assert band_contains(band, (15.0, 0.0))
    assert band_contains(band, (9.5, 0.0))
    assert not band_contains(band, (8.5, 0.0))


def test_band_rejects_bad_box_and_epsilon():
    with pytest.raises(ValueError):
        bbox_epipolar_band(F01, (10, 10, 10, 20))
    with pytest.raises(ValueError):
        bbox_epipolar_band(F01, (10, 10, 20, 20), -1.0)


def test_epipole_inside_box_is_degenerate():
    e = epipole(F01)[:2]
    with pytest.raises(DegenerateBand):
        bbox_epipolar_band(F01, (e[0] - 5, e[1] - 5, e[0] + 5, e[1] + 5))


boxes = st.tuples(st.floats(0, 1200), st.floats(0, 650), st.floats(2, 80), st.floats(2, 200)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))
points = st.tuples(st.floats(-200, 1500), st.floats(-200, 900))


@given(boxes, points, st.floats(0, 20), st.floats(0, 20))
def test_epsilon_monotone(box, p, e1, e2):
    band = bbox_epipolar_band(F01, box, min(e1, e2))
    if band_contains(band, p):
        assert band_contains(band.with_epsilon(max(e1, e2)), p)


@given(boxes)
def test_orientation_idempotent_and_unit(box):
    band = bbox_epipolar_band(F01, box)
    assert np.array_equal(orient_lines(band.lines), band.lines)
    assert np.all(np.abs(np.hypot(band.lines[:, 0], band.lines[:, 1]) - 1) < 1e-12)
    assert np.all(band.lines[:, :2] @ band.lines[0, :2] >= 0)


@given(boxes, points, st.floats(1e-6, 1e6), st.floats(0, 20))
@settings(max_examples=50)
def test_scale_invariance(box, p, s, eps):
    a = bbox_epipolar_band(F01, box, eps)
    b = bbox_epipolar_band(F01.scaled(s), box, eps)
    assert np.allclose(a.lines, b.lines, atol=1e-12)
    assert band_contains(a, p) == band_contains(b, p) or abs(a.margin(p)) < 1e-9


def test_project_point_examples():
    cam = CameraModel("c", np.eye(3), np.eye(3), np.zeros(3), 10, 10)
    p, ok = project_point(cam, (0.0, 0.0, 1.0))
    assert np.array_equal(p, [0.0, 0.0]) and ok
    _, ok = project_point(cam, (0.0, 0.0, -1.0))
    assert not ok
    with pytest.raises(PointAtCameraCenter):
        project_point(cam, (0.0, 0.0, 0.0))


def test_project_points_matches_scalar():
    P = scene_points(20)
    px, ok = project_points(CAMS[2], P)
    for i, X in enumerate(P):
        p, o = project_point(CAMS[2], X)
        assert np.allclose(p, px[i]) and o == ok[i]


def test_camera_invariants():
    for cam in CAMS:
        cam.validate()
    bad = CameraModel("x", np.eye(3), 2 * np.eye(3), np.zeros(3), 1, 1)
    with pytest.raises(ValueError):
        bad.validate()


def test_calibration_roundtrip(tmp_path):
    path = tmp_path / "calib.json"
    save_calibration(CAMS, path)
    loaded = load_calibration(path)
    assert sorted(loaded) == [c.id for c in CAMS]
    for c in CAMS:
        assert np.array_equal(loaded[c.id].R, c.R) and np.array_equal(loaded[c.id].t, c.t)
