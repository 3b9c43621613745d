"""Deterministic synthetic multi-camera world with ground truth.

Objects are upright cuboids moving on the ground plane (z = 0) with
piecewise constant velocity, reflected at the world bounds. Cameras sit on
a ring and look inward; each camera's aim point is pulled toward its own
side of the ring as its overlap fraction drops, which shrinks the shared
field of view.

Randomness is split into named sub-streams so that switching one noise
source on or off leaves all other draws untouched.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, ZeroVector
from .geometry import CameraModel, intrinsics, look_at, project_points
from .labels import PseudoLabel

STREAMS = {
    "trajectories": 1,
    "cameras": 2,
    "identities": 3,
    "jitter": 4,
    "misses": 5,
    "false_positives": 6,
    "embeddings": 7,
    "scores": 8,
    "classes": 9,
    "source": 10,
}


def substream(seed: int, name: str, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name], *map(int, key)])


@dataclass
class SceneConfig:
    n_objects: int = 20
    n_frames: int = 200
    n_cameras: int = 3
    world_half_extent: float = 10.0
    object_width: float = 0.6
    object_height: float = 1.8
    speed_range: tuple = (0.03, 0.10)
    turn_prob: float = 0.05
    exit_prob: float = 0.01
    # camera rig
    ring_radius: float = 16.0
    camera_height: float = 20.0
    focal: float = 1500.0
    image_width: int = 1280
    image_height: int = 720
    overlap: float | list = 0.6
    # detector model
    jitter_sigma: float = 2.0
    miss_max: float = 0.3
    fp_rate: float = 2.0
    tp_score: tuple = (5.0, 2.0)
    fp_score: tuple = (1.5, 6.0)
    class_noise: float = 0.6
    # appearance model
    embed_dim: int = 16
    n_classes: int = 3
    class_spread: float = 1.0
    style_scale: float | list = 0.2
    embed_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.speed_range = tuple(self.speed_range)
        self.tp_score = tuple(self.tp_score)
        self.fp_score = tuple(self.fp_score)
        if isinstance(self.overlap, (list, tuple)):
            self.overlap = [float(v) for v in self.overlap]
        if isinstance(self.style_scale, (list, tuple)):
            self.style_scale = [float(v) for v in self.style_scale]

    def validate(self) -> None:
        probs = {"turn_prob": self.turn_prob, "exit_prob": self.exit_prob, "miss_max": self.miss_max, "class_noise": self.class_noise}
        probs.update({f"overlap[{i}]": v for i, v in enumerate(self.overlaps())})
        for name, v in probs.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} must lie in [0, 1]")
        if self.jitter_sigma < 0 or self.embed_noise < 0 or self.fp_rate < 0 or min(self.style_scales()) < 0:
            raise ConfigError("noise scales and rates must be non-negative")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be at least 2")
        if self.n_objects < 0 or self.n_frames < 1 or self.n_cameras < 1 or self.n_classes < 1:
            raise ConfigError("counts must be positive")
        if self.world_half_extent <= self.object_width or self.ring_radius <= 0:
            raise ConfigError("world bounds are too small for the configured objects")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid speed range {self.speed_range}")

    def overlaps(self) -> list[float]:
        if isinstance(self.overlap, list):
            if len(self.overlap) != self.n_cameras:
                raise ConfigError("overlap list length must equal n_cameras")
            return list(self.overlap)
        return [float(self.overlap)] * self.n_cameras

    def style_scales(self) -> list[float]:
        if isinstance(self.style_scale, list):
            if len(self.style_scale) != self.n_cameras:
                raise ConfigError("style_scale list length must equal n_cameras")
            return list(self.style_scale)
        return [float(self.style_scale)] * self.n_cameras

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speed_range"] = list(self.speed_range)
        d["tp_score"] = list(self.tp_score)
        d["fp_score"] = list(self.fp_score)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class CameraStyle:
    A: np.ndarray
    s: np.ndarray


@dataclass
class GroundTruth:
    # frames[f][camera_id] -> list of (identity, bbox)
    frames: list
    latents: np.ndarray  # (n_identities, d) unit vectors
    classes: np.ndarray  # (n_identities,) foreground class ids in 1..n_classes
    prototypes: np.ndarray  # (n_classes, d)
    positions: np.ndarray  # (n_frames, n_objects, 2)
    slot_ids: np.ndarray  # (n_frames, n_objects) identity occupying each slot
    styles: dict = field(default_factory=dict)

    def visible(self, frame: int, camera_id: str) -> dict:
        return dict(self.frames[frame].get(camera_id, []))

    def records(self):
        """Flat per-box records, sorted by frame then camera then identity."""
        for f, per_cam in enumerate(self.frames):
            for cam in sorted(per_cam):
                for ident, bbox in per_cam[cam]:
                    yield {"frame": f, "camera_id": cam, "identity": int(ident), "bbox": [float(v) for v in bbox]}

    def box_index(self, frames=None) -> dict:
        """{(camera_id, frame): [bbox, ...]} for the metric functions."""
        out = {}
        for rec in self.records():
            if frames is None or rec["frame"] in frames:
                out.setdefault((rec["camera_id"], rec["frame"]), []).append(rec["bbox"])
        return out


def ring_cameras(config: SceneConfig) -> list[CameraModel]:
    K = intrinsics(config.focal, config.image_width, config.image_height)
    cams = []
    # at zero overlap the optical axis meets the ground at the world edge, which keeps
    # neighbouring footprints apart
    aim_max = config.world_half_extent
    for c, ov in enumerate(config.overlaps()):
        theta = 2 * np.pi * c / config.n_cameras + np.pi / 6
        u = np.array([np.cos(theta), np.sin(theta)])
        center = np.array([*(config.ring_radius * u), config.camera_height])
        aim = np.array([*((1.0 - ov) * aim_max * u), 0.0])
        cams.append(look_at(f"cam{c}", center, aim, K, config.image_width, config.image_height))
    return cams


def _trajectories(config: SceneConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Positions ``(T, n_objects, 2)`` and identity per slot ``(T, n_objects)``.

    Each slot holds one object at a time; with probability ``exit_prob`` per
    frame the object leaves and a fresh identity enters at a random spot.
    """
    n, T = config.n_objects, config.n_frames
    lim = config.world_half_extent - config.object_width / 2
    pos = np.empty((T, n, 2))
    ids = np.empty((T, n), dtype=int)
    p = rng.uniform(-lim, lim, size=(n, 2))
    heading = rng.uniform(0, 2 * np.pi, size=n)
    speed = rng.uniform(*config.speed_range, size=n)
    v = speed[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    cur = np.arange(n)
    next_id = n
    for f in range(T):
        pos[f] = p
        ids[f] = cur
        turn = rng.random(n) < config.turn_prob
        new_heading = rng.uniform(0, 2 * np.pi, size=n)
        v[turn] = speed[turn, None] * np.stack([np.cos(new_heading[turn]), np.sin(new_heading[turn])], axis=1)
        p = p + v
        # reflect at the bounds
        for axis in range(2):
            hi = p[:, axis] > lim
            lo = p[:, axis] < -lim
            p[hi, axis] = 2 * lim - p[hi, axis]
            p[lo, axis] = -2 * lim - p[lo, axis]
            v[hi | lo, axis] *= -1
        exits = rng.random(n) < config.exit_prob
        spawn = rng.uniform(-lim, lim, size=(n, 2))
        for k in np.flatnonzero(exits):
            p[k] = spawn[k]
            cur[k] = next_id
            next_id += 1
    return pos, ids


def cuboid_corners(xy, width: float, height: float) -> np.ndarray:
    x, y = xy
    h = width / 2
    return np.array([[x + dx, y + dy, z] for z in (0.0, height) for dx in (-h, h) for dy in (-h, h)])


def _unit(v, axis=-1):
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def camera_styles(config: SceneConfig, camera_ids, seed: int) -> dict:
    d = config.embed_dim
    styles = {}
    scales = config.style_scales()
    for c, cam_id in enumerate(camera_ids):
        rng = substream(seed, "cameras", c)
        A = np.eye(d) + scales[c] * rng.standard_normal((d, d)) / np.sqrt(d)
        s = scales[c] * rng.standard_normal(d) / np.sqrt(d)
        styles[cam_id] = CameraStyle(A, s)
    return styles


def gen_scene(config: SceneConfig, seed: int | None = None):
    """Generate ground truth and the camera rig. Deterministic in ``seed``."""
    config.validate()
    seed = config.seed if seed is None else seed
    cams = ring_cameras(config)
    pos, slot_ids = _trajectories(config, substream(seed, "trajectories"))
    n_ids = int(slot_ids.max()) + 1 if slot_ids.size else 0

    rng = substream(seed, "identities")
    d = config.embed_dim
    protos = _unit(rng.standard_normal((config.n_classes, d)))
    classes = rng.integers(1, config.n_classes + 1, size=n_ids)
    latents = _unit(protos[classes - 1] + config.class_spread * rng.standard_normal((n_ids, d)) / np.sqrt(d))

    frames = []
    for f in range(config.n_frames):
        per_cam = {}
        for cam in cams:
            vis = []
            for slot in np.argsort(slot_ids[f], kind="stable"):
                corners = cuboid_corners(pos[f, slot], config.object_width, config.object_height)
                px, ok = project_points(cam, corners)
                if ok.all():
                    bbox = (px[:, 0].min(), px[:, 1].min(), px[:, 0].max(), px[:, 1].max())
                    vis.append((int(slot_ids[f, slot]), tuple(float(v) for v in bbox)))
            per_cam[cam.id] = vis
        frames.append(per_cam)
    styles = camera_styles(config, [c.id for c in cams], seed)
    gt = GroundTruth(frames, latents, classes, protos, pos, slot_ids, styles)
    return gt, cams


def gen_embedding(z, style: CameraStyle | None, noise: float, rng=None) -> np.ndarray:
    """Camera-styled descriptor ``normalize(A z + s + eta)``, ``eta ~ N(0, noise^2 I)``."""
    z = np.asarray(z, dtype=float)
    e = z.copy() if style is None else style.A @ z + style.s
    for attempt in range(2):
        v = e + (noise * rng.standard_normal(len(z)) if noise > 0 else 0.0)
        n = np.linalg.norm(v)
        if n >= 1e-12:
            return v / n
        if noise == 0:
            break
    raise ZeroVector("styled embedding collapsed to zero")


def _beta(rng, params):
    return float(rng.beta(*params))


def render_detections(gt: GroundTruth, cameras, config: SceneConfig, seed: int | None = None) -> dict:
    """Noisy detector output per camera: {camera_id: [PseudoLabel, ...]}.

    True positives are jittered GT boxes whose miss probability falls with
    their score; false positives are uniform boxes with low scores and no
    identity.
    """
    seed = config.seed if seed is None else seed
    out = {}
    for c, cam in enumerate(cameras):
        r_jit = substream(seed, "jitter", c)
        r_miss = substream(seed, "misses", c)
        r_fp = substream(seed, "false_positives", c)
        r_emb = substream(seed, "embeddings", c)
        r_score = substream(seed, "scores", c)
        r_cls = substream(seed, "classes", c)
        style = gt.styles[cam.id]
        dets = []
        for f, per_cam in enumerate(gt.frames):
            for ident, bbox in per_cam[cam.id]:
                score = _beta(r_score, config.tp_score)
                missed = r_miss.random() < config.miss_max * (1.0 - score)
                jit = r_jit.standard_normal(4) * config.jitter_sigma
                emb = gen_embedding(gt.latents[ident], style, config.embed_noise, r_emb)
                wrong = r_cls.random() < config.class_noise * (1.0 - score)
                alt = int(r_cls.integers(1, config.n_classes)) if config.n_classes > 1 else 0
                if missed:
                    continue
                true_cls = int(gt.classes[ident])
                cls = true_cls if not wrong or config.n_classes == 1 else (alt if alt < true_cls else alt + 1)
                box = _sane_box(np.asarray(bbox) + jit)
                dets.append(PseudoLabel(cam.id, f, box, score, cls, emb, gt_identity=int(ident)))
            n_fp = r_fp.poisson(config.fp_rate)
            for _ in range(n_fp):
                w = r_fp.uniform(20, 60)
                h = w * r_fp.uniform(2.0, 3.5)
                x = r_fp.uniform(0, cam.width - w)
                y = r_fp.uniform(0, max(cam.height - h, 1.0))
                score = _beta(r_fp, config.fp_score)
                z = _unit(r_fp.standard_normal(config.embed_dim))
                emb = gen_embedding(z, style, config.embed_noise, r_fp)
                cls = int(r_fp.integers(1, config.n_classes + 1))
                dets.append(PseudoLabel(cam.id, f, (x, y, x + w, y + h), score, cls, emb, gt_identity=None))
        out[cam.id] = dets
    return out


def _sane_box(b):
    x1, y1, x2, y2 = (float(v) for v in b)
    if x2 - x1 < 1.0:
        x1, x2 = (x1 + x2) / 2 - 0.5, (x1 + x2) / 2 + 0.5
    if y2 - y1 < 1.0:
        y1, y2 = (y1 + y2) / 2 - 0.5, (y1 + y2) / 2 + 0.5
    return (x1, y1, x2, y2)


def gen_source_dataset(gt: GroundTruth, config: SceneConfig, n: int = 2000, seed: int | None = None):
    """Labelled canonical-view descriptors standing in for a public pretraining set.

    Fresh identities are drawn around the scene's class prototypes (label
    1..n_classes); a share of random directions serves as background (label 0).
    """
    seed = config.seed if seed is None else seed
    rng = substream(seed, "source")
    d = config.embed_dim
    n_bg = n // (config.n_classes + 1)
    y = np.concatenate([np.zeros(n_bg, dtype=int), rng.integers(1, config.n_classes + 1, size=n - n_bg)])
    z = np.empty((n, d))
    z[:n_bg] = _unit(rng.standard_normal((n_bg, d)))
    z[n_bg:] = _unit(gt.prototypes[y[n_bg:] - 1] + config.class_spread * rng.standard_normal((n - n_bg, d)) / np.sqrt(d))
    X = np.array([gen_embedding(zi, None, config.embed_noise, rng) for zi in z])
    order = rng.permutation(n)
    return X[order], y[order]


def oracle_reid_f1(config: SceneConfig, style_scale: float, n_draws: int = 1000, seed: int = 0) -> float:
    """Best-threshold F1 of single-frame cross-camera matching at a given style scale.

    Each draw compares one identity's descriptor on camera 0 with the same
    identity and with a different identity on camera 1.
    """
    from .evalmetrics import best_threshold_f1

    cfg = SceneConfig(**{**asdict(config), "style_scale": style_scale, "n_cameras": 2, "overlap": 1.0})
    styles = camera_styles(cfg, ["a", "b"], seed)
    rng = np.random.default_rng([seed, 99])
    d = cfg.embed_dim
    protos = _unit(rng.standard_normal((cfg.n_classes, d)))
    dists, same = [], []
    for _ in range(n_draws):
        k = rng.integers(0, cfg.n_classes, size=2)
        z = _unit(protos[k] + cfg.class_spread * rng.standard_normal((2, d)) / np.sqrt(d))
        ea = gen_embedding(z[0], styles["a"], cfg.embed_noise, rng)
        eb = gen_embedding(z[0], styles["b"], cfg.embed_noise, rng)
        ec = gen_embedding(z[1], styles["b"], cfg.embed_noise, rng)
        dists += [np.linalg.norm(ea - eb), np.linalg.norm(ea - ec)]
        same += [True, False]
    return best_threshold_f1(dists, same)[1]


def write_dataset(out_dir, gt: GroundTruth, cameras, detections, config: SceneConfig, seed: int, source=None) -> None:
    """Write calib.json, detections/<cam>.jsonl, gt.jsonl and scene.json under ``out_dir``."""
    from .geometry import save_calibration
    from .labels import write_jsonl

    out = Path(out_dir)
    (out / "detections").mkdir(parents=True, exist_ok=True)
    save_calibration(cameras, out / "calib.json")
    for cam_id in sorted(detections):
        write_jsonl(detections[cam_id], out / "detections" / f"{cam_id}.jsonl")
    lines = []
    for rec in gt.records():
        rec["class_id"] = int(gt.classes[rec["identity"]])
        lines.append(json.dumps(rec, sort_keys=True))
    (out / "gt.jsonl").write_text("\n".join(lines) + "\n")
    (out / "scene.json").write_text(json.dumps({"config": config.to_dict(), "seed": int(seed)}, sort_keys=True, indent=1) + "\n")
    if source is not None:
        X, y = source
        rows = [json.dumps({"class_id": int(c), "embedding": x.tolist()}, sort_keys=True) for x, c in zip(X, y)]
        (out / "source.jsonl").write_text("\n".join(rows) + "\n")


def read_gt(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
