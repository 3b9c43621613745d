"""Pseudo-labels and score-based tiering."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidThreshold

DEFAULT_T_CLS = 0.8


class Tier(str, enum.Enum):
    CONFIDENT = "confident"
    UNCERTAIN = "uncertain"
    UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class PseudoLabel:
    camera_id: str
    frame: int
    bbox: tuple[float, float, float, float]
    score: float
    class_id: int
    embedding: np.ndarray
    tier: Tier = Tier.UNASSIGNED
    gt_identity: int | None = None

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate bbox {self.bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        object.__setattr__(self, "embedding", np.asarray(self.embedding, dtype=float))

    @property
    def center(self) -> np.ndarray:
        x1, y1, x2, y2 = self.bbox
        return np.array([(x1 + x2) / 2, (y1 + y2) / 2])

    def to_dict(self, with_tier: bool = False) -> dict:
        d = {
            "camera_id": self.camera_id,
            "frame": int(self.frame),
            "bbox": list(self.bbox),
            "score": float(self.score),
            "class_id": int(self.class_id),
            "embedding": self.embedding.tolist(),
            "gt_identity": None if self.gt_identity is None else int(self.gt_identity),
        }
        if with_tier:
            d["tier"] = self.tier.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PseudoLabel":
        tier = Tier(d["tier"]) if "tier" in d else Tier.UNASSIGNED
        return cls(
            camera_id=str(d["camera_id"]),
            frame=int(d["frame"]),
            bbox=tuple(d["bbox"]),
            score=float(d["score"]),
            class_id=int(d["class_id"]),
            embedding=np.asarray(d["embedding"], dtype=float),
            tier=tier,
            gt_identity=d.get("gt_identity"),
        )


def split_labels(detections, t_cls: float = DEFAULT_T_CLS):
    """Split detections into (confident, uncertain) by classification score.

    A score equal to ``t_cls`` counts as confident. Input order is kept in
    both outputs and every returned label carries its tier.
    """
    if not 0.0 < t_cls < 1.0:
        raise InvalidThreshold(f"t_cls must lie in (0, 1), got {t_cls}")
    confident, uncertain = [], []
    for d in detections:
        if d.score >= t_cls:
            confident.append(replace(d, tier=Tier.CONFIDENT))
        else:
            uncertain.append(replace(d, tier=Tier.UNCERTAIN))
    return confident, uncertain


def tier_all(detections, t_cls: float = DEFAULT_T_CLS) -> list[PseudoLabel]:
    """Copies of ``detections`` with tiers stamped, order unchanged."""
    if not 0.0 < t_cls < 1.0:
        raise InvalidThreshold(f"t_cls must lie in (0, 1), got {t_cls}")
    return [replace(d, tier=Tier.CONFIDENT if d.score >= t_cls else Tier.UNCERTAIN) for d in detections]


def dumps_jsonl(labels, with_tier: bool = False) -> str:
    return "".join(json.dumps(d.to_dict(with_tier), sort_keys=True) + "\n" for d in labels)


def write_jsonl(labels, path, with_tier: bool = False) -> None:
    Path(path).write_text(dumps_jsonl(labels, with_tier))


def read_jsonl(path) -> list[PseudoLabel]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(PseudoLabel.from_dict(json.loads(line)))
    return out


def by_frame(labels) -> dict[int, list[PseudoLabel]]:
    """Group labels per frame, preserving file order within a frame."""
    out: dict[int, list[PseudoLabel]] = {}
    for d in labels:
        out.setdefault(d.frame, []).append(d)
    return out
