"""Short-horizon single-object tracking with a constant-velocity model.

Stands in for a learned single-object tracker: the seed box is extended
frame by frame, greedily matching the detection with the highest IoU
against the motion prediction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evalmetrics import iou

DEFAULT_HORIZON = 4
DEFAULT_IOU_MIN = 0.3


@dataclass
class Tracklet:
    camera_id: str
    start_frame: int
    boxes: list = field(default_factory=list)
    embeddings: list = field(default_factory=list)
    observed: list = field(default_factory=list)
    # per-step GT identity of the matched detection (None if predicted); evaluation only
    gt_ids: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.boxes)

    @property
    def next_frame(self) -> int:
        return self.start_frame + len(self.boxes)

    @classmethod
    def from_seed(cls, seed) -> "Tracklet":
        return cls(seed.camera_id, seed.frame, [tuple(seed.bbox)], [np.asarray(seed.embedding)], [True], [seed.gt_identity])

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "start_frame": int(self.start_frame),
            "boxes": [list(map(float, b)) for b in self.boxes],
            "embeddings": [np.asarray(e, dtype=float).tolist() for e in self.embeddings],
            "observed": [bool(o) for o in self.observed],
            "gt_ids": list(self.gt_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tracklet":
        return cls(
            d["camera_id"],
            int(d["start_frame"]),
            [tuple(b) for b in d["boxes"]],
            [np.asarray(e, dtype=float) for e in d["embeddings"]],
            list(d["observed"]),
            list(d.get("gt_ids", [None] * len(d["boxes"]))),
        )


def predict(prev_boxes) -> tuple:
    """Constant-velocity extrapolation from the last one or two boxes.

    The center moves by the last displacement; width and height are taken
    from the most recent box.
    """
    if len(prev_boxes) == 0:
        raise ValueError("predict needs at least one box")
    last = prev_boxes[-1]
    if len(prev_boxes) == 1:
        return tuple(last)
    before = prev_boxes[-2]
    dx = (last[0] + last[2]) / 2 - (before[0] + before[2]) / 2
    dy = (last[1] + last[3]) / 2 - (before[1] + before[3]) / 2
    return (last[0] + dx, last[1] + dy, last[2] + dx, last[3] + dy)


def step(track: Tracklet, detections, iou_min: float = DEFAULT_IOU_MIN) -> Tracklet:
    """Advance ``track`` by one frame using the detections of that frame."""
    pred = predict(track.boxes[-2:])
    best, best_iou = None, -1.0
    for d in detections:
        if d.camera_id != track.camera_id:
            raise ValueError(f"detection from {d.camera_id} offered to a track on {track.camera_id}")
        v = iou(pred, d.bbox)
        # strict > keeps the lowest index on ties
        if v > best_iou:
            best, best_iou = d, v
    if best is not None and best_iou >= iou_min:
        track.boxes.append(tuple(best.bbox))
        track.embeddings.append(np.asarray(best.embedding))
        track.observed.append(True)
        track.gt_ids.append(best.gt_identity)
    else:
        track.boxes.append(pred)
        track.embeddings.append(track.embeddings[-1])
        track.observed.append(False)
        track.gt_ids.append(None)
    return track


def track_n(seed, frames, n: int = DEFAULT_HORIZON, iou_min: float = DEFAULT_IOU_MIN) -> Tracklet:
    """Track ``seed`` over the next ``n`` frames.

    ``frames`` maps frame index to that frame's detections on the seed's
    camera (a list indexed by offset also works); missing slots are empty.
    """
    track = Tracklet.from_seed(seed)
    for k in range(1, n + 1):
        f = seed.frame + k
        if isinstance(frames, dict):
            dets = frames.get(f, [])
        else:
            dets = frames[k - 1] if k - 1 < len(frames) else []
        step(track, dets, iou_min)
    return track
