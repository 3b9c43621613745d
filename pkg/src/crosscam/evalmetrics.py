"""Detection and association quality metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import MissingGT

IOU_THRESH = 0.8


def iou(b1, b2) -> float:
    ix = min(b1[2], b2[2]) - max(b1[0], b2[0])
    iy = min(b1[3], b2[3]) - max(b1[1], b2[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    a1 = (b1[2] - b1[0]) * (b1[3] - b1[1])
    a2 = (b2[2] - b2[0]) * (b2[3] - b2[1])
    return float(inter / (a1 + a2 - inter))


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _gt_index(gt):
    """Normalize GT into {(camera_id, frame): [bbox, ...]}."""
    if gt is None:
        raise MissingGT("ground truth is required for this metric")
    if isinstance(gt, dict):
        return gt
    out = {}
    for rec in gt:
        out.setdefault((rec["camera_id"], int(rec["frame"])), []).append(rec["bbox"])
    return out


def match_detections(detections, gt, iou_thresh: float = IOU_THRESH) -> np.ndarray:
    """Greedy score-descending one-to-one matching within each (camera, frame).

    Returns a boolean array aligned with ``detections``: True for true positives.
    Ties in score keep input order.
    """
    gt = _gt_index(gt)
    tp = np.zeros(len(detections), dtype=bool)
    groups: dict = {}
    for i, d in enumerate(detections):
        groups.setdefault((d.camera_id, d.frame), []).append(i)
    for key, idx in groups.items():
        boxes = gt.get(key, [])
        if not boxes:
            continue
        idx = sorted(idx, key=lambda i: -detections[i].score)
        ious = iou_matrix([detections[i].bbox for i in idx], boxes)
        taken = np.zeros(len(boxes), dtype=bool)
        for row, i in enumerate(idx):
            cand = np.where(~taken, ious[row], -1.0)
            j = int(np.argmax(cand))
            if cand[j] >= iou_thresh:
                taken[j] = True
                tp[i] = True
    return tp


def _rate(num, den):
    return None if den == 0 else num / den


def tier_quality(labels, gt, iou_thresh: float = IOU_THRESH) -> dict:
    """Precision and recall per tier, plus the combined figures.

    Matching runs once over all labels so the tiers share one GT assignment;
    an empty tier reports ``None`` precision.
    """
    gt_idx = _gt_index(gt)
    cams = {d.camera_id for d in labels} or {k[0] for k in gt_idx}
    n_gt = sum(len(v) for k, v in gt_idx.items() if k[0] in cams)
    tp = match_detections(labels, gt_idx, iou_thresh)
    out = {"n_gt": n_gt}
    for tier in ("confident", "uncertain"):
        mask = np.array([d.tier.value == tier for d in labels], dtype=bool)
        n, k = int(mask.sum()), int(tp[mask].sum())
        out[tier] = {"n": n, "tp": k, "precision": _rate(k, n), "recall": _rate(k, n_gt)}
    k = int(tp.sum())
    out["combined"] = {"n": len(labels), "tp": k, "precision": _rate(k, len(labels)), "recall": _rate(k, n_gt)}
    return out


def average_precision(detections, gt, iou_thresh: float = IOU_THRESH) -> float:
    """Single-class AP with all-points interpolation."""
    gt_idx = _gt_index(gt)
    cams = {d.camera_id for d in detections} or {k[0] for k in gt_idx}
    n_gt = sum(len(v) for k, v in gt_idx.items() if k[0] in cams)
    if n_gt == 0:
        raise MissingGT("no ground-truth boxes for the evaluated cameras")
    tp = match_detections(detections, gt_idx, iou_thresh)
    scores = np.array([d.score for d in detections])
    return ap_from_ranking(scores, tp, n_gt)


def ap_from_ranking(scores, is_tp, n_gt: int) -> float:
    scores = np.asarray(scores, dtype=float)
    is_tp = np.asarray(is_tp, dtype=bool)
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    hits = is_tp[order]
    ctp = np.cumsum(hits)
    precision = ctp / np.arange(1, len(hits) + 1)
    recall = ctp / n_gt
    # envelope: best precision at any recall at least this large
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


class AssociationCounter:
    """Streaming precision/recall over accepted cross-camera pairs."""

    def __init__(self, n_gt_pairs: int):
        self.n_gt_pairs = int(n_gt_pairs)
        self.n_accepted = 0
        self.n_correct = 0

    def update(self, id_a, id_b) -> None:
        self.n_accepted += 1
        if id_a is not None and id_a == id_b:
            self.n_correct += 1

    def result(self) -> dict:
        return _pr(self.n_correct, self.n_accepted, self.n_gt_pairs)


def _pr(correct, accepted, n_gt):
    p = correct / accepted if accepted else None
    r = correct / n_gt if n_gt else 0.0
    f1 = 2 * p * r / (p + r) if p and p + r > 0 else 0.0
    return {"precision": p, "recall": r, "f1": f1, "n_accepted": accepted, "n_correct": correct, "n_gt": n_gt}


def association_pr(id_pairs, n_gt_pairs: int) -> dict:
    """Precision, recall and F1 of accepted pairs.

    ``id_pairs`` holds the GT identities of the two seeds of each accepted
    pair (``None`` for false positives). A pair is correct iff both are equal
    and not None. Precision of an empty set is reported as None.
    """
    ids = np.array([(-1 if a is None else a, -2 if b is None else b) for a, b in id_pairs], dtype=np.int64)
    correct = int(np.sum(ids[:, 0] == ids[:, 1])) if len(ids) else 0
    return _pr(correct, len(ids), n_gt_pairs)


def best_threshold_f1(distances, same) -> tuple[float, float]:
    """Threshold on ``distance <= tau`` maximizing F1 against the ``same`` mask."""
    distances = np.asarray(distances, dtype=float)
    same = np.asarray(same, dtype=bool)
    n_pos = int(same.sum())
    if n_pos == 0:
        return 0.0, 0.0
    order = np.argsort(distances, kind="stable")
    d, s = distances[order], same[order]
    tp = np.cumsum(s)
    k = np.arange(1, len(d) + 1)
    f1 = 2 * tp / (k + n_pos)
    # only cut between distinct distance values
    last = np.r_[d[1:] != d[:-1], True]
    f1 = np.where(last, f1, -1)
    i = int(np.argmax(f1))
    return float(d[i]), float(f1[i])


@dataclass
class EvalReport:
    tier_quality: dict
    association: dict
    pruning_factor: float
    ap_at_08: float
    counts: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)
