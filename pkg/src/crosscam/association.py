"""Cross-camera pair construction.

Teacher boxes on each overlapping camera are mapped to epipolar bands on
the student camera; student boxes whose center falls in a band become
candidates. Each candidate is extended into a pair of short tracklets, the
tracklets are compared through their aggregated descriptors, and the pairs
that pass the distance gate form the non-camera-specific training set.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBand, DegenerateGeometry, ZeroVector
from .geometry import CONTAIN_TOL, FundamentalMatrix, bbox_corners, bbox_epipolar_band, fundamental_matrix
from .labels import DEFAULT_T_CLS, PseudoLabel, Tier, by_frame, tier_all
from .tracker import DEFAULT_HORIZON, DEFAULT_IOU_MIN, Tracklet, track_n

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 6.0  # 3 x the simulator's 2 px jitter
DEFAULT_TAU = 0.6  # F1-best on the default scene's validation block


@dataclass
class AssociationConfig:
    t_cls: float = DEFAULT_T_CLS
    epsilon: float = DEFAULT_EPSILON
    tau: float = DEFAULT_TAU
    horizon: int = DEFAULT_HORIZON
    window: int = 0
    iou_min: float = DEFAULT_IOU_MIN
    # "center": test the candidate's bbox center; "corners": any corner inside the band
    query: str = "center"
    # which tier supplies student boxes: "uncertain" (default), "confident" or "both"
    student_tier: str = "uncertain"

    def __post_init__(self):
        if self.query not in ("center", "corners"):
            raise ValueError(f"unknown query mode {self.query!r}")
        if self.student_tier not in ("uncertain", "confident", "both"):
            raise ValueError(f"unknown student tier {self.student_tier!r}")
        if self.epsilon < 0 or self.horizon < 0 or self.window < 0:
            raise ValueError("epsilon, horizon and window must be non-negative")


@dataclass
class CandidatePair:
    teacher: PseudoLabel
    student: PseudoLabel
    band_margin: float
    teacher_index: int = -1
    student_index: int = -1


@dataclass
class TrackletPair:
    a: Tracklet  # student camera
    b: Tracklet  # teacher camera
    distance: float | None = None
    accepted: bool | None = None
    student_index: int = -1
    teacher_index: int = -1
    note: str = ""

    @property
    def seed_ids(self) -> tuple:
        return self.a.gt_ids[0], self.b.gt_ids[0]

    @property
    def student_key(self) -> tuple:
        return self.a.start_frame, self.student_index

    @property
    def sort_key(self) -> tuple:
        return self.a.start_frame, self.b.camera_id, self.teacher_index, self.student_index

    def to_dict(self) -> dict:
        return {
            "a": self.a.to_dict(),
            "b": self.b.to_dict(),
            "distance": self.distance,
            "accepted": self.accepted,
            "student_index": self.student_index,
            "teacher_index": self.teacher_index,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrackletPair":
        return cls(
            Tracklet.from_dict(d["a"]),
            Tracklet.from_dict(d["b"]),
            d["distance"],
            d["accepted"],
            d["student_index"],
            d["teacher_index"],
            d.get("note", ""),
        )


@dataclass
class TrainingSets:
    student_cam: str
    ncs_pairs: list  # accepted, deduplicated TrackletPairs
    cs_labels: list  # confident PseudoLabels on the student camera
    gated_pairs: list = field(default_factory=list)  # every candidate after gating
    stats: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def prune_candidates(teacher_dets, student_dets, F: FundamentalMatrix, epsilon: float, query: str = "center"):
    """Student boxes inside the epipolar band of each teacher box.

    ``F`` must map teacher-camera pixels to student-camera lines. Returns the
    candidates and the pruning factor ``|teacher| * |student| / max(1, |candidates|)``.
    Teacher boxes whose band is degenerate (epipole inside the box) are skipped.
    """
    out = []
    if student_dets:
        centers = np.array([s.center for s in student_dets])
        corners = np.array([bbox_corners(s.bbox) for s in student_dets]) if query == "corners" else None
    for ti, t in enumerate(teacher_dets):
        if not student_dets:
            break
        try:
            band = bbox_epipolar_band(F, t.bbox, epsilon)
        except DegenerateBand:
            log.debug("skipping teacher box %s: degenerate band", t.bbox)
            continue
        L = band.lines
        if query == "center":
            s = centers @ L[:, :2].T + L[:, 2]  # (n_students, 4)
            margin = np.minimum(epsilon - s.min(axis=1), s.max(axis=1) + epsilon)
        else:
            s = corners @ L[:, :2].T + L[:, 2]  # (n_students, 4 corners, 4 lines)
            m = np.minimum(epsilon - s.min(axis=2), s.max(axis=2) + epsilon)
            margin = m.max(axis=1)
        for si in np.flatnonzero(margin >= -CONTAIN_TOL):
            out.append(CandidatePair(t, student_dets[si], float(margin[si]), ti, int(si)))
    factor = len(teacher_dets) * len(student_dets) / max(1, len(out))
    return out, factor


def augment_with_tracking(pair: CandidatePair, student_frames, teacher_frames,
                          horizon: int = DEFAULT_HORIZON, iou_min: float = DEFAULT_IOU_MIN) -> TrackletPair:
    """Track both seeds independently on their own cameras for ``horizon`` frames."""
    a = track_n(pair.student, student_frames, horizon, iou_min)
    b = track_n(pair.teacher, teacher_frames, horizon, iou_min)
    return TrackletPair(a, b, student_index=pair.student_index, teacher_index=pair.teacher_index)


def aggregate_feature(tracklet: Tracklet) -> np.ndarray:
    """Mean of the tracklet's descriptors, scaled to unit length."""
    if len(tracklet.embeddings) == 0:
        raise ValueError("empty tracklet")
    m = np.mean(np.asarray(tracklet.embeddings, dtype=float), axis=0)
    n = np.linalg.norm(m)
    if n < 1e-12:
        raise ZeroVector("aggregated feature has zero norm")
    return m / n


def reid_gate(pair: TrackletPair, tau: float) -> TrackletPair:
    """Set ``distance`` (Euclidean, aggregated features) and ``accepted = distance <= tau``."""
    try:
        d = float(np.linalg.norm(aggregate_feature(pair.a) - aggregate_feature(pair.b)))
    except ZeroVector as exc:
        pair.distance, pair.accepted, pair.note = None, False, f"rejected: {exc}"
        return pair
    pair.distance = d
    pair.accepted = d <= tau
    return pair


def select_pairs(gated_pairs, tau: float) -> list:
    """Accept at ``tau`` and keep the closest teacher for each student box."""
    best: dict = {}
    for p in gated_pairs:
        if p.distance is None or p.distance > tau:
            continue
        k = p.student_key
        cur = best.get(k)
        if cur is None or (p.distance, p.b.camera_id, p.teacher_index) < (cur.distance, cur.b.camera_id, cur.teacher_index):
            best[k] = p
    return sorted(best.values(), key=lambda p: p.sort_key)


def _eligible(d: PseudoLabel, tier: str) -> bool:
    if tier == "both":
        return True
    return d.tier == (Tier.UNCERTAIN if tier == "uncertain" else Tier.CONFIDENT)


def seed_frames(frames, horizon: int):
    """Frames whose full tracking horizon stays inside ``frames`` (a range)."""
    return range(frames.start, frames.stop - horizon)


def build_training_sets(student_cam: str, detections: dict, cameras: dict, config: AssociationConfig | None = None,
                        frames: range | None = None, keep_gated: bool = True) -> TrainingSets:
    """Build the ncs and cs training sets for ``student_cam``.

    ``detections`` maps camera id to PseudoLabels; labels without a tier are
    tiered with ``config.t_cls``. ``frames`` limits seeds and tracking to a
    contiguous block so tracklets never straddle a split boundary.
    """
    config = config or AssociationConfig()
    dets = {c: (tier_all(v, config.t_cls) if any(d.tier == Tier.UNASSIGNED for d in v) else list(v))
            for c, v in detections.items()}
    if frames is None:
        last = max((d.frame for v in dets.values() for d in v), default=-1)
        frames = range(0, last + 1)
    per_frame = {c: by_frame(v) for c, v in dets.items()}
    student_frames = per_frame.get(student_cam, {})
    seeds = seed_frames(frames, config.horizon)

    gated = []
    n_pairs_total = 0
    n_cands_total = 0
    per_teacher = {}
    tracklet_cache: dict = {}

    def tracklet(cam, frame, idx, det):
        key = (cam, frame, idx)
        if key not in tracklet_cache:
            tracklet_cache[key] = track_n(det, per_frame[cam], config.horizon, config.iou_min)
        return tracklet_cache[key]

    for teacher_cam in sorted(c for c in dets if c != student_cam):
        try:
            F = fundamental_matrix(cameras[teacher_cam], cameras[student_cam])
        except DegenerateGeometry as exc:
            log.warning("skipping %s -> %s: %s", teacher_cam, student_cam, exc)
            continue
        n_cand = 0
        teacher_frames = per_frame[teacher_cam]
        for i in seeds:
            teachers = teacher_frames.get(i, [])
            pool = []
            for j in range(max(seeds.start, i - config.window), min(seeds.stop, i + config.window + 1)):
                for k, d in enumerate(student_frames.get(j, [])):
                    if _eligible(d, config.student_tier):
                        pool.append((k, d))
            cands, _ = prune_candidates(teachers, [d for _, d in pool], F, config.epsilon, config.query)
            n_pairs_total += len(teachers) * len(pool)
            n_cand += len(cands)
            for c in cands:
                s_idx = pool[c.student_index][0]
                a = tracklet(student_cam, c.student.frame, s_idx, c.student)
                b = tracklet(teacher_cam, i, c.teacher_index, c.teacher)
                tp = TrackletPair(a, b, student_index=s_idx, teacher_index=c.teacher_index)
                gated.append(reid_gate(tp, config.tau))
        per_teacher[teacher_cam] = n_cand
        n_cands_total += n_cand

    gated.sort(key=lambda p: p.sort_key)
    ncs = select_pairs(gated, config.tau)
    cs = [d for d in dets.get(student_cam, []) if d.tier == Tier.CONFIDENT and d.frame in frames]
    warnings = []
    if not ncs:
        why = "no epipolar candidates" if not gated else f"{len(gated)} candidates, none within tau={config.tau}"
        warnings.append(f"no shared FOV: no cross-camera pairs were found for {student_cam} ({why})")
        log.warning(warnings[-1])
    stats = {
        "n_pairs_total": n_pairs_total,
        "n_candidates": n_cands_total,
        "n_gated": len(gated),
        "n_accepted": sum(1 for p in gated if p.accepted),
        "n_ncs": len(ncs),
        "n_cs": len(cs),
        "candidates_per_teacher": per_teacher,
        "pruning_factor": n_pairs_total / max(1, n_cands_total),
        "frames": [frames.start, frames.stop],
    }
    return TrainingSets(student_cam, ncs, cs, gated if keep_gated else [], stats, warnings)


def count_gt_pairs(student_cam: str, detections: dict, config: AssociationConfig | None = None,
                   frames: range | None = None) -> int:
    """Student seeds that a perfect associator could pair correctly.

    Counts eligible student boxes (seed frames, configured tier) carrying a GT
    identity that some teacher camera also detected in the same frame.
    """
    config = config or AssociationConfig()
    dets = {c: (tier_all(v, config.t_cls) if any(d.tier == Tier.UNASSIGNED for d in v) else list(v))
            for c, v in detections.items()}
    if frames is None:
        last = max((d.frame for v in dets.values() for d in v), default=-1)
        frames = range(0, last + 1)
    seeds = seed_frames(frames, config.horizon)
    seen = set()
    for cam, v in dets.items():
        if cam != student_cam:
            seen.update((d.frame, d.gt_identity) for d in v if d.gt_identity is not None)
    n = 0
    for d in dets.get(student_cam, []):
        if _eligible(d, config.student_tier) and d.frame in seeds and d.gt_identity is not None and (d.frame, d.gt_identity) in seen:
            n += 1
    return n


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def write_training_sets(sets: TrainingSets, out_dir, config: AssociationConfig | None = None) -> Path:
    """Write pairs.jsonl, ncs_pairs.jsonl, cs_labels.jsonl and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pairs.jsonl").write_text("".join(_dump(p.to_dict()) + "\n" for p in sets.gated_pairs))
    (out / "ncs_pairs.jsonl").write_text("".join(_dump(p.to_dict()) + "\n" for p in sets.ncs_pairs))
    (out / "cs_labels.jsonl").write_text("".join(_dump(d.to_dict(with_tier=True)) + "\n" for d in sets.cs_labels))
    manifest = {
        "schema_version": 1,
        "student_cam": sets.student_cam,
        "ncs_pairs": "ncs_pairs.jsonl",
        "cs_labels": "cs_labels.jsonl",
        "pairs": "pairs.jsonl",
        "config": asdict(config) if config is not None else None,
        "stats": sets.stats,
        "warnings": sets.warnings,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path


def read_training_sets(manifest_path) -> TrainingSets:
    manifest_path = Path(manifest_path)
    m = json.loads(manifest_path.read_text())
    base = manifest_path.parent

    def lines(name):
        p = base / name
        if not p.exists():
            return []
        return [json.loads(x) for x in p.read_text().splitlines() if x.strip()]

    ncs = [TrackletPair.from_dict(d) for d in lines(m["ncs_pairs"])]
    cs = [PseudoLabel.from_dict(d) for d in lines(m["cs_labels"])]
    gated = [TrackletPair.from_dict(d) for d in lines(m.get("pairs", "pairs.jsonl"))]
    return TrainingSets(m["student_cam"], ncs, cs, gated, m.get("stats", {}), m.get("warnings", []))
