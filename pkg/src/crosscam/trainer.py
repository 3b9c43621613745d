"""Toy two-group classifier and the two-phase consistency/detection schedule.

The model is ``cls = softmax(W_d tanh(W_b x + b_b) + b_d)``. The first layer
plays the backbone, the second the detection head. Phase 1 minimizes the
summed cross entropy between the class distributions predicted for the two
views of each cross-camera pair, updating the backbone only; phase 2
minimizes cross entropy against confident pseudo-labels, updating the
head only.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, Diverged, LabelOutOfRange, PhaseBatchMismatch

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
BACKBONE = ("W_b", "b_b")
DETECTION = ("W_d", "b_d")
GROUPS = {"backbone": BACKBONE, "detection": DETECTION}


@dataclass
class ToyModelParams:
    W_b: np.ndarray  # (d_h, d_in)
    b_b: np.ndarray  # (d_h,)
    W_d: np.ndarray  # (C, d_h)
    b_d: np.ndarray  # (C,)

    def __post_init__(self):
        for name in BACKBONE + DETECTION:
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        d_h, d_in = self.W_b.shape
        C = self.W_d.shape[0]
        if self.b_b.shape != (d_h,) or self.W_d.shape != (C, d_h) or self.b_d.shape != (C,):
            raise DimMismatch("inconsistent parameter shapes")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in BACKBONE + DETECTION):
            raise Diverged("non-finite parameter")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W_b.shape[1], self.W_b.shape[0], self.W_d.shape[0]

    @classmethod
    def zeros(cls, d_in: int, d_h: int, C: int) -> "ToyModelParams":
        return cls(np.zeros((d_h, d_in)), np.zeros(d_h), np.zeros((C, d_h)), np.zeros(C))

    @classmethod
    def random(cls, d_in: int, d_h: int, C: int, rng, scale: float = 0.5) -> "ToyModelParams":
        return cls(
            rng.standard_normal((d_h, d_in)) * scale / np.sqrt(d_in),
            np.zeros(d_h),
            rng.standard_normal((C, d_h)) * scale / np.sqrt(d_h),
            np.zeros(C),
        )

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(self.W_b.copy(), self.b_b.copy(), self.W_d.copy(), self.b_d.copy())

    def group(self, name: str) -> dict:
        return {k: getattr(self, k) for k in GROUPS[name]}

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "dims": {"d_in": self.dims[0], "d_h": self.dims[1], "C": self.dims[2]},
            "backbone": {k: getattr(self, k).tolist() for k in BACKBONE},
            "detection": {k: getattr(self, k).tolist() for k in DETECTION},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyModelParams":
        return cls(d["backbone"]["W_b"], d["backbone"]["b_b"], d["detection"]["W_d"], d["detection"]["b_d"])


@dataclass(frozen=True)
class LossSchedule:
    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def active_group(self) -> str | None:
        if self.alpha > 0 and self.beta == 0:
            return "backbone"
        if self.beta > 0 and self.alpha == 0:
            return "detection"
        return None


PHASE1 = LossSchedule(1.0, 0.0)
PHASE2 = LossSchedule(0.0, 1.0)


@dataclass
class TrainConfig:
    epochs_p1: int = 30
    epochs_p2: int = 30
    lr: float = 0.01
    batch: int = 8
    seed: int = 0
    d_h: int = 16
    symmetric: bool = False
    skip_phase1: bool = False


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _hidden(params: ToyModelParams, X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != params.dims[0]:
        raise DimMismatch(f"input dim {X.shape[-1]} != model input dim {params.dims[0]}")
    return np.tanh(X @ params.W_b.T + params.b_b)


def forward(params: ToyModelParams, x) -> np.ndarray:
    """Class probabilities for one descriptor ``(d_in,)`` or a batch ``(N, d_in)``."""
    h = _hidden(params, x)
    return _softmax(h @ params.W_d.T + params.b_d)


def cross_entropy(p, q) -> np.ndarray:
    """``-sum_c p_c ln max(q_c, 1e-12)`` along the last axis."""
    return -np.sum(np.asarray(p) * np.log(np.maximum(q, LOG_CLAMP)), axis=-1)


def consistency_loss(pairs, symmetric: bool = False) -> float:
    """Summed cross entropy over ``(cls1, cls2)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        return 0.0
    P = np.array([p for p, _ in pairs], dtype=float)
    Q = np.array([q for _, q in pairs], dtype=float)
    if symmetric:
        return float(np.sum(0.5 * (cross_entropy(P, Q) + cross_entropy(Q, P))))
    return float(np.sum(cross_entropy(P, Q)))


def detection_loss(cls, label: int) -> float:
    cls = np.asarray(cls, dtype=float)
    if not 0 <= label < len(cls):
        raise LabelOutOfRange(f"label {label} outside 0..{len(cls) - 1}")
    return float(-np.log(max(cls[label], LOG_CLAMP)))


def overall_loss(schedule: LossSchedule, consistency: float, det: float) -> float:
    return schedule.alpha * consistency + schedule.beta * det


# -- gradients ---------------------------------------------------------------


def _softmax_backward(p, g_p):
    """Vector-Jacobian product of softmax: dL/dz from dL/dp."""
    return p * (g_p - np.sum(p * g_p, axis=-1, keepdims=True))


def _ce_grads(p, q):
    """Gradients of sum CE(p, q) with respect to p and q, honouring the log clamp."""
    g_p = -np.log(np.maximum(q, LOG_CLAMP))
    g_q = np.where(q > LOG_CLAMP, -p / np.where(q > LOG_CLAMP, q, 1.0), 0.0)
    return g_p, g_q


@dataclass
class Batch:
    """Either consistency pairs (``X1``, ``X2``) or labelled samples (``X``, ``y``)."""

    X1: np.ndarray | None = None
    X2: np.ndarray | None = None
    X: np.ndarray | None = None
    y: np.ndarray | None = None

    @property
    def kind(self) -> str:
        if self.X1 is not None:
            return "pairs"
        if self.X is not None:
            return "labels"
        return "empty"

    def __len__(self):
        if self.X1 is not None:
            return len(self.X1)
        if self.X is not None:
            return len(self.X)
        return 0


def batch_loss(params: ToyModelParams, batch: Batch, schedule: LossSchedule, symmetric: bool = False) -> float:
    cons = det = 0.0
    if batch.kind == "pairs" and len(batch):
        P, Q = forward(params, batch.X1), forward(params, batch.X2)
        cons = consistency_loss(zip(P, Q), symmetric)
    elif batch.kind == "labels" and len(batch):
        cls = forward(params, batch.X)
        y = np.asarray(batch.y, dtype=int)
        if np.any(y < 0) or np.any(y >= params.dims[2]):
            raise LabelOutOfRange("label outside class range")
        det = float(-np.sum(np.log(np.maximum(cls[np.arange(len(y)), y], LOG_CLAMP))))
    return overall_loss(schedule, cons, det)


def backward(params: ToyModelParams, batch: Batch, schedule: LossSchedule, symmetric: bool = False) -> dict:
    """Analytic gradients of the scheduled loss for the active group.

    The inactive group is returned as exact zeros. Phase 1 expects a pair
    batch, phase 2 a labelled batch.
    """
    grads = {k: np.zeros_like(getattr(params, k)) for k in BACKBONE + DETECTION}
    group = schedule.active_group
    if group is None:
        raise PhaseBatchMismatch("schedule must weight exactly one loss term")
    want = "pairs" if group == "backbone" else "labels"
    if len(batch) == 0:
        return grads
    if batch.kind != want:
        raise PhaseBatchMismatch(f"{group} phase needs a {want} batch, got {batch.kind}")

    if group == "backbone":
        X1, X2 = np.asarray(batch.X1, dtype=float), np.asarray(batch.X2, dtype=float)
        h1, h2 = _hidden(params, X1), _hidden(params, X2)
        p = _softmax(h1 @ params.W_d.T + params.b_d)
        q = _softmax(h2 @ params.W_d.T + params.b_d)
        g_p, g_q = _ce_grads(p, q)
        if symmetric:
            g_q2, g_p2 = _ce_grads(q, p)
            g_p, g_q = 0.5 * (g_p + g_p2), 0.5 * (g_q + g_q2)
        g_a1 = (_softmax_backward(p, g_p) @ params.W_d) * (1 - h1**2)
        g_a2 = (_softmax_backward(q, g_q) @ params.W_d) * (1 - h2**2)
        grads["W_b"] = schedule.alpha * (g_a1.T @ X1 + g_a2.T @ X2)
        grads["b_b"] = schedule.alpha * (g_a1.sum(axis=0) + g_a2.sum(axis=0))
    else:
        X = np.asarray(batch.X, dtype=float)
        y = np.asarray(batch.y, dtype=int)
        if np.any(y < 0) or np.any(y >= params.dims[2]):
            raise LabelOutOfRange("label outside class range")
        h = _hidden(params, X)
        cls = _softmax(h @ params.W_d.T + params.b_d)
        onehot = np.eye(params.dims[2])[y]
        _, g_q = _ce_grads(onehot, cls)
        g_z = _softmax_backward(cls, g_q)
        grads["W_d"] = schedule.beta * (g_z.T @ h)
        grads["b_d"] = schedule.beta * g_z.sum(axis=0)
    return grads


def numerical_gradient(params: ToyModelParams, batch: Batch, schedule: LossSchedule, h: float = 1e-5,
                       symmetric: bool = False) -> dict:
    """Central finite differences of :func:`batch_loss` for every parameter entry."""
    out = {}
    for name in BACKBONE + DETECTION:
        arr = getattr(params, name)
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = batch_loss(params, batch, schedule, symmetric)
            arr[idx] = old - h
            lm = batch_loss(params, batch, schedule, symmetric)
            arr[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out[name] = g
    return out


# -- training ----------------------------------------------------------------


def sgd_step(params: ToyModelParams, grads: dict, lr: float, group: str) -> None:
    for k in GROUPS[group]:
        setattr(params, k, getattr(params, k) - lr * grads[k])


def _batches(n: int, size: int, rng):
    order = rng.permutation(n)
    for s in range(0, n, size):
        yield order[s:s + size]


def _check(value: float, phase: str, epoch: int) -> float:
    if not np.isfinite(value):
        raise Diverged(f"{phase} loss became non-finite at epoch {epoch}")
    return value


def pair_arrays(ncs_pairs) -> tuple[np.ndarray, np.ndarray]:
    """One (student view, teacher view) descriptor pair per aligned tracklet step."""
    X1, X2 = [], []
    for p in ncs_pairs:
        for e1, e2 in zip(p.a.embeddings, p.b.embeddings):
            X1.append(e1)
            X2.append(e2)
    if not X1:
        return np.zeros((0, 0)), np.zeros((0, 0))
    return np.asarray(X1, dtype=float), np.asarray(X2, dtype=float)


def label_arrays(cs_labels) -> tuple[np.ndarray, np.ndarray]:
    if not cs_labels:
        return np.zeros((0, 0)), np.zeros(0, dtype=int)
    return np.array([d.embedding for d in cs_labels], dtype=float), np.array([d.class_id for d in cs_labels], dtype=int)


@dataclass
class TrainResult:
    params: ToyModelParams
    losses: list  # (epoch, phase, loss) rows, one per epoch
    initial_loss: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def _mean_loss(params, batch, schedule, symmetric):
    return batch_loss(params, batch, schedule, symmetric) / max(1, len(batch))


def _run_phase(params, full: Batch, schedule: LossSchedule, epochs: int, cfg: TrainConfig, rng, phase: int, start_epoch: int):
    rows = []
    group = schedule.active_group
    n = len(full)
    for e in range(epochs):
        for idx in _batches(n, cfg.batch, rng):
            if full.kind == "pairs":
                b = Batch(X1=full.X1[idx], X2=full.X2[idx])
            else:
                b = Batch(X=full.X[idx], y=full.y[idx])
            g = backward(params, b, schedule, cfg.symmetric)
            sgd_step(params, g, cfg.lr, group)
        loss = _check(_mean_loss(params, full, schedule, cfg.symmetric), f"phase {phase}", e)
        rows.append((start_epoch + e + 1, phase, loss))
    return rows


def train_two_phase(sets, config: TrainConfig | None = None, init: ToyModelParams | None = None,
                    n_classes: int | None = None) -> TrainResult:
    """Phase 1 on ncs pairs (backbone), then phase 2 on cs labels (head).

    ``sets`` needs ``ncs_pairs`` and ``cs_labels`` attributes. Reported losses
    are per-item means over the whole phase data set after each epoch.
    """
    cfg = config or TrainConfig()
    rng = np.random.default_rng([cfg.seed, 2])
    X1, X2 = pair_arrays(sets.ncs_pairs)
    X, y = label_arrays(sets.cs_labels)
    if init is None:
        d_in = X1.shape[1] if len(X1) else X.shape[1]
        C = n_classes or int(y.max()) + 1
        init = ToyModelParams.random(d_in, cfg.d_h, C, np.random.default_rng([cfg.seed, 1]))
    params = init.copy()
    result = TrainResult(params, [])
    result.snapshots["initial"] = init.copy()

    pairs = Batch(X1=X1, X2=X2)
    if cfg.skip_phase1 or len(pairs) == 0:
        if len(pairs) == 0 and not cfg.skip_phase1:
            result.warnings.append("no ncs pairs: phase 1 skipped")
            log.warning(result.warnings[-1])
        result.losses += [(e + 1, 1, None) for e in range(cfg.epochs_p1)]
    else:
        result.initial_loss["phase1"] = _mean_loss(params, pairs, PHASE1, cfg.symmetric)
        result.losses += _run_phase(params, pairs, PHASE1, cfg.epochs_p1, cfg, rng, 1, 0)
    result.snapshots["after_phase1"] = params.copy()

    labels = Batch(X=X, y=y)
    if len(labels) == 0:
        result.warnings.append("no cs labels: phase 2 skipped")
        log.warning(result.warnings[-1])
        result.losses += [(cfg.epochs_p1 + e + 1, 2, None) for e in range(cfg.epochs_p2)]
    else:
        result.initial_loss["phase2"] = _mean_loss(params, labels, PHASE2, cfg.symmetric)
        result.losses += _run_phase(params, labels, PHASE2, cfg.epochs_p2, cfg, rng, 2, cfg.epochs_p1)
    result.snapshots["after_phase2"] = params.copy()
    return result


def fit_supervised(X, y, n_classes: int, d_h: int = 16, epochs: int = 20, lr: float = 0.05, batch: int = 32,
                   seed: int = 0) -> ToyModelParams:
    """Train both groups jointly on labelled data (used to build the base model)."""
    rng = np.random.default_rng([seed, 3])
    params = ToyModelParams.random(X.shape[1], d_h, n_classes, np.random.default_rng([seed, 4]), scale=1.0)
    for _ in range(epochs):
        for idx in _batches(len(X), batch, rng):
            b = Batch(X=X[idx], y=y[idx])
            h = _hidden(params, b.X)
            cls = _softmax(h @ params.W_d.T + params.b_d)
            g_z = cls - np.eye(n_classes)[b.y]
            g_a = (g_z @ params.W_d) * (1 - h**2)
            params.W_d -= lr * g_z.T @ h
            params.b_d -= lr * g_z.sum(axis=0)
            params.W_b -= lr * g_a.T @ b.X
            params.b_b -= lr * g_a.sum(axis=0)
    return params


def accuracy(params: ToyModelParams, X, y) -> float:
    if len(X) == 0:
        return float("nan")
    return float(np.mean(np.argmax(forward(params, X), axis=1) == np.asarray(y)))


def save_params(params: ToyModelParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), sort_keys=True) + "\n")


def load_params(path) -> ToyModelParams:
    return ToyModelParams.from_dict(json.loads(Path(path).read_text()))


def write_losses(rows, path) -> None:
    lines = ["epoch,phase,loss"]
    for epoch, phase, loss in rows:
        lines.append(f"{epoch},{phase},{'' if loss is None else repr(float(loss))}")
    Path(path).write_text("\n".join(lines) + "\n")
