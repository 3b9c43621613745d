import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crosscam.errors import DimMismatch, Diverged, LabelOutOfRange, PhaseBatchMismatch
from crosscam.trainer import (
    BACKBONE, DETECTION, GROUPS, PHASE1, PHASE2, Batch, LossSchedule, ToyModelParams, TrainConfig, backward, batch_loss,
    consistency_loss, cross_entropy, detection_loss, forward, load_params, numerical_gradient, overall_loss,
    save_params, train_two_phase, write_losses,
)

from test_association import tracklet
from crosscam.association import TrackletPair


def probs(draw_vals):
    v = np.asarray(draw_vals, dtype=float) + 1e-3
    return v / v.sum()


dist = st.lists(st.floats(0, 1), min_size=3, max_size=3).map(probs)


def rel_err(a, n, floor=1e-6):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor))


def test_zero_params_uniform():
    p = ToyModelParams.zeros(4, 3, 5)
    assert np.allclose(forward(p, np.ones(4)), 0.2, atol=1e-15)


@given(st.integers(0, 10_000))
@settings(max_examples=30)
def test_forward_sums_to_one(seed):
    rng = np.random.default_rng(seed)
    p = ToyModelParams.random(6, 5, 4, rng, scale=3.0)
    X = rng.normal(size=(7, 6)) * 10
    cls = forward(p, X)
    assert np.all(np.abs(cls.sum(axis=1) - 1) < 1e-12)
    assert np.array_equal(cls, forward(p, X))


def test_forward_dim_mismatch():
    with pytest.raises(DimMismatch):
        forward(ToyModelParams.zeros(4, 3, 2), np.ones(5))


def test_consistency_examples():
    one = np.array([0.0, 1.0, 0.0])
    assert consistency_loss([(one, one)]) == 0.0
    half = np.array([0.5, 0.5])
    assert abs(consistency_loss([(half, half)]) - math.log(2)) < 1e-12
    assert abs(math.log(2) - 0.693147) < 1e-6


@given(st.lists(st.tuples(dist, dist), min_size=1, max_size=20))
def test_consistency_batch_equals_pair_sum(pairs):
    direct = 0.0
    for p, q in pairs:
        direct += -sum(pc * math.log(max(qc, 1e-12)) for pc, qc in zip(p, q))
    assert abs(consistency_loss(pairs) - direct) < 1e-12
    assert consistency_loss(pairs) >= 0


@given(dist, dist)
def test_zero_only_when_one_hot_identical(p, q):
    # strictly positive distributions always cost something
    assert consistency_loss([(p, q)]) > 0


def test_symmetric_variant():
    p, q = np.array([0.7, 0.3]), np.array([0.2, 0.8])
    assert consistency_loss([(p, q)], symmetric=True) == pytest.approx(0.5 * (cross_entropy(p, q) + cross_entropy(q, p)))


def test_log_clamp():
    assert consistency_loss([(np.array([1.0, 0.0]), np.array([0.0, 1.0]))]) == pytest.approx(-math.log(1e-12))


def test_detection_loss_examples():
    assert detection_loss(np.array([0.0, 1.0, 0.0]), 1) == 0.0
    assert detection_loss(np.full(4, 0.25), 2) == pytest.approx(math.log(4), abs=1e-15)
    with pytest.raises(LabelOutOfRange):
        detection_loss(np.full(3, 1 / 3), 3)


@given(dist, st.integers(0, 2))
def test_detection_is_consistency_with_one_hot(q, k):
    onehot = np.eye(3)[k]
    assert detection_loss(q, k) == pytest.approx(consistency_loss([(onehot, q)]), abs=1e-12)


def test_overall_loss_examples():
    assert overall_loss(PHASE1, 2.0, 5.0) == 2.0
    assert overall_loss(PHASE2, 2.0, 5.0) == 5.0
    assert overall_loss(LossSchedule(0, 0), 2.0, 5.0) == 0.0
    with pytest.raises(ValueError):
        LossSchedule(-1, 0)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
def test_overall_loss_linear(a, b, c1, d1, c2, d2):
    s = LossSchedule(a, b)
    assert overall_loss(s, c1 + c2, d1 + d2) == pytest.approx(overall_loss(s, c1, d1) + overall_loss(s, c2, d2))


def _draw(rng):
    d_in, d_h, C = rng.integers(2, 7), rng.integers(2, 7), rng.integers(2, 5)
    p = ToyModelParams.random(d_in, d_h, C, rng, scale=1.0)
    n = rng.integers(1, 6)
    pairs = Batch(X1=rng.normal(size=(n, d_in)), X2=rng.normal(size=(n, d_in)))
    labels = Batch(X=rng.normal(size=(n, d_in)), y=rng.integers(0, C, n))
    return p, pairs, labels


@pytest.mark.parametrize("symmetric", [False, True])
def test_gradients_match_finite_differences(symmetric):
    rng = np.random.default_rng(11)
    for _ in range(20):
        p, pairs, labels = _draw(rng)
        for sched, batch in ((PHASE1, pairs), (PHASE2, labels)):
            a = backward(p, batch, sched, symmetric)
            n = numerical_gradient(p, batch, sched, 1e-5, symmetric)
            for k in GROUPS[sched.active_group]:
                assert rel_err(a[k], n[k]) < 1e-4


def test_inactive_group_exactly_zero():
    p, pairs, labels = _draw(np.random.default_rng(2))
    g = backward(p, pairs, PHASE1)
    assert all(not g[k].any() for k in DETECTION)
    g = backward(p, labels, PHASE2)
    assert all(not g[k].any() for k in BACKBONE)


def test_empty_batch_zero_gradient():
    p, _, _ = _draw(np.random.default_rng(3))
    d_in = p.dims[0]
    g = backward(p, Batch(X1=np.zeros((0, d_in)), X2=np.zeros((0, d_in))), PHASE1)
    assert all(not v.any() for v in g.values())


def test_batch_kind_must_match_phase():
    p, pairs, labels = _draw(np.random.default_rng(4))
    with pytest.raises(PhaseBatchMismatch):
        backward(p, labels, PHASE1)
    with pytest.raises(PhaseBatchMismatch):
        backward(p, pairs, PHASE2)
    with pytest.raises(PhaseBatchMismatch):
        backward(p, pairs, LossSchedule(1, 1))


def _sets(seed=0, n_pairs=12, n_labels=30, d=6, C=3):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        z = rng.normal(size=d)
        pairs.append(TrackletPair(tracklet(z + 0.1 * rng.normal(size=(3, d)), frame=i),
                                  tracklet(z + 0.1 * rng.normal(size=(3, d)), cam="cam1", frame=i)))
    labels = [SimpleNamespace(embedding=rng.normal(size=d), class_id=int(rng.integers(0, C))) for _ in range(n_labels)]
    return SimpleNamespace(ncs_pairs=pairs, cs_labels=labels)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.batch, cfg.epochs_p1, cfg.epochs_p2) == (0.01, 8, 30, 30)


def test_phase_isolation_bitwise():
    r = train_two_phase(_sets(), TrainConfig(epochs_p1=5, epochs_p2=5), n_classes=3)
    s = r.snapshots
    for k in DETECTION:
        assert np.array_equal(getattr(s["after_phase1"], k), getattr(s["initial"], k))
    for k in BACKBONE:
        assert not np.array_equal(getattr(s["after_phase1"], k), getattr(s["initial"], k))
        assert np.array_equal(getattr(s["after_phase2"], k), getattr(s["after_phase1"], k))
    assert len(r.losses) == 10 and [row[1] for row in r.losses] == [1] * 5 + [2] * 5


def test_training_is_deterministic():
    a = train_two_phase(_sets(), TrainConfig(epochs_p1=3, epochs_p2=3, seed=4), n_classes=3)
    b = train_two_phase(_sets(), TrainConfig(epochs_p1=3, epochs_p2=3, seed=4), n_classes=3)
    assert a.losses == b.losses
    assert np.array_equal(a.params.W_b, b.params.W_b)


def test_missing_pairs_skips_phase1():
    sets = _sets()
    sets.ncs_pairs = []
    r = train_two_phase(sets, TrainConfig(epochs_p1=2, epochs_p2=2), n_classes=3)
    assert r.warnings and r.losses[0] == (1, 1, None)
    for k in BACKBONE:
        assert np.array_equal(getattr(r.params, k), getattr(r.snapshots["initial"], k))


def test_skip_flag_leaves_backbone():
    r = train_two_phase(_sets(), TrainConfig(epochs_p1=2, epochs_p2=2, skip_phase1=True), n_classes=3)
    assert not r.warnings
    assert np.array_equal(r.params.W_b, r.snapshots["initial"].W_b)


def test_non_finite_loss_diverges():
    sets = _sets()
    sets.cs_labels[0].embedding[0] = np.nan
    with pytest.raises(Diverged):
        train_two_phase(sets, TrainConfig(epochs_p1=1, epochs_p2=1, skip_phase1=True), n_classes=3)


def test_phase1_reduces_consistency():
    r = train_two_phase(_sets(n_pairs=40), TrainConfig(epochs_p1=30, epochs_p2=0, lr=0.05), n_classes=3)
    assert r.losses[-1][2] < r.initial_loss["phase1"]


def test_param_and_loss_files(tmp_path):
    r = train_two_phase(_sets(), TrainConfig(epochs_p1=2, epochs_p2=3), n_classes=3)
    save_params(r.params, tmp_path / "p.json")
    back = load_params(tmp_path / "p.json")
    assert all(np.array_equal(getattr(back, k), getattr(r.params, k)) for k in BACKBONE + DETECTION)
    write_losses(r.losses, tmp_path / "losses.csv")
    lines = (tmp_path / "losses.csv").read_text().splitlines()
    assert lines[0] == "epoch,phase,loss" and len(lines) == 1 + 5


def test_params_reject_bad_shapes():
    with pytest.raises(DimMismatch):
        ToyModelParams(np.zeros((3, 4)), np.zeros(2), np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(Diverged):
        ToyModelParams(np.full((3, 4), np.inf), np.zeros(3), np.zeros((2, 3)), np.zeros(2))


def test_batch_loss_matches_functions():
    p, pairs, labels = _draw(np.random.default_rng(9))
    P, Q = forward(p, pairs.X1), forward(p, pairs.X2)
    assert batch_loss(p, pairs, PHASE1) == pytest.approx(consistency_loss(zip(P, Q)), abs=1e-12)
    cls = forward(p, labels.X)
    want = sum(detection_loss(c, int(y)) for c, y in zip(cls, labels.y))
    assert batch_loss(p, labels, PHASE2) == pytest.approx(want, abs=1e-12)
