"""End-to-end orchestration: simulate, split labels, associate, train, eval, report.

Every stage reads the previous stage's files from an artifacts directory and
writes its own, so any stage can be rerun on its own. JSON is written with
sorted keys and round-trip float repr, which makes reruns byte-identical.

Layout under the artifacts directory::

    config.json
    dataset/    calib.json detections/<cam>.jsonl gt.jsonl scene.json source.jsonl
    labels/     <cam>.jsonl (with tiers)
    sets/       manifest.json ncs_pairs.jsonl cs_labels.jsonl pairs.jsonl tau_sweep.json
    model/      base_params.json params.json losses.csv train_meta.json
    report.json
    report/     summary.txt *.csv
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evalmetrics as em
from .association import AssociationConfig, build_training_sets, count_gt_pairs, read_training_sets, select_pairs, write_training_sets
from .errors import ConfigError, CrossCamError, MissingArtifacts
from .geometry import load_calibration
from .labels import read_jsonl, tier_all, write_jsonl
from .simulator import SceneConfig, gen_scene, gen_source_dataset, oracle_reid_f1, read_gt, render_detections, write_dataset
from .trainer import TrainConfig, accuracy, fit_supervised, load_params, save_params, train_two_phase, write_losses

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STAGES = ("simulate", "split-labels", "associate", "train", "eval", "report")
DEFAULT_TAU_GRID = [round(0.05 * i, 2) for i in range(1, 31)]
SEPARABILITY_SCALES = [0.0, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5]


@dataclass
class PipelineConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    student_cam: str = "cam0"
    t_cls: float = 0.8
    epsilon: float = 6.0
    # None: pick the F1-best value of tau_grid on the validation split
    tau: float | None = None
    tau_grid: list = field(default_factory=lambda: list(DEFAULT_TAU_GRID))
    horizon: int = 4
    w: int = 0
    iou_min: float = 0.3
    lr: float = 0.01
    batch: int = 8
    epochs_p1: int = 30
    epochs_p2: int = 30
    d_h: int = 16
    symmetric: bool = False
    no_phase1: bool = False
    train_backbone_with_confident: bool = False
    n_source: int = 2000
    split: list = field(default_factory=lambda: [16, 4, 5])
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        if isinstance(self.scene, dict):
            self.scene = SceneConfig.from_dict(self.scene)

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} is not supported (expected {SCHEMA_VERSION})")
        if not 0.0 < self.t_cls < 1.0:
            raise ConfigError(f"t_cls={self.t_cls} must lie in (0, 1)")
        if self.epsilon < 0 or self.horizon < 0 or self.w < 0:
            raise ConfigError("epsilon, horizon and w must be non-negative")
        if self.tau is not None and self.tau < 0:
            raise ConfigError("tau must be non-negative")
        if not self.tau_grid or min(self.tau_grid) < 0:
            raise ConfigError("tau_grid must be a non-empty list of non-negative values")
        if self.lr <= 0 or self.batch < 1 or self.epochs_p1 < 0 or self.epochs_p2 < 0 or self.d_h < 1:
            raise ConfigError("invalid training settings")
        if len(self.split) != 3 or min(self.split) <= 0:
            raise ConfigError("split must be three positive weights")
        self.scene.validate()
        if self.student_cam not in [f"cam{i}" for i in range(self.scene.n_cameras)]:
            raise ConfigError(f"student camera {self.student_cam!r} is not part of the scene")
        if self.scene.n_frames < sum(self.split):
            raise ConfigError("too few frames for the split")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {d['schema_version']} is not supported (expected {SCHEMA_VERSION})")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def association(self, tau: float | None = None) -> AssociationConfig:
        tier = "confident" if self.train_backbone_with_confident else "uncertain"
        return AssociationConfig(t_cls=self.t_cls, epsilon=self.epsilon, tau=self.tau if tau is None else tau,
                                 horizon=self.horizon, window=self.w, iou_min=self.iou_min, student_tier=tier)

    def training(self) -> TrainConfig:
        return TrainConfig(epochs_p1=self.epochs_p1, epochs_p2=self.epochs_p2, lr=self.lr, batch=self.batch,
                           seed=self.seed, d_h=self.d_h, symmetric=self.symmetric, skip_phase1=self.no_phase1)


class StageError(CrossCamError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def split_frames(n_frames: int, ratio=(16, 4, 5)) -> dict:
    """Contiguous train/val/test blocks in the given ratio."""
    total = sum(ratio)
    a = n_frames * ratio[0] // total
    b = n_frames * (ratio[0] + ratio[1]) // total
    return {"train": range(0, a), "val": range(a, b), "test": range(b, n_frames)}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, range):
        return [obj.start, obj.stop]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(_plain(obj), sort_keys=True, indent=1) + "\n")


def _require(*paths) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise MissingArtifacts("missing artifacts: " + ", ".join(missing))


def _read_detections(det_dir) -> dict:
    det_dir = Path(det_dir)
    _require(det_dir)
    return {p.stem: read_jsonl(p) for p in sorted(det_dir.glob("*.jsonl"))}


def _read_source(path):
    rows = [json.loads(x) for x in Path(path).read_text().splitlines() if x.strip()]
    return np.array([r["embedding"] for r in rows], dtype=float), np.array([r["class_id"] for r in rows], dtype=int)


def _identity_classes(gt_records) -> dict:
    return {r["identity"]: r["class_id"] for r in gt_records}


def _gt_index(gt_records, frames=None) -> dict:
    out = {}
    for r in gt_records:
        if frames is None or r["frame"] in frames:
            out.setdefault((r["camera_id"], r["frame"]), []).append(r["bbox"])
    return out


# ---------------------------------------------------------------- stages


def stage_simulate(cfg: PipelineConfig, root: Path) -> None:
    scene = cfg.scene
    gt, cams = gen_scene(scene, cfg.seed)
    dets = render_detections(gt, cams, scene, cfg.seed)
    source = gen_source_dataset(gt, scene, cfg.n_source, cfg.seed)
    write_dataset(root / "dataset", gt, cams, dets, scene, cfg.seed, source)


def stage_split_labels(cfg: PipelineConfig, root: Path) -> None:
    dets = _read_detections(root / "dataset" / "detections")
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for cam, labels in dets.items():
        write_jsonl(tier_all(labels, cfg.t_cls), root / "labels" / f"{cam}.jsonl", with_tier=True)


def _association_sweep(cfg, dets, cams, frames, grid):
    """Gate once at the largest tau, then re-threshold for every grid value."""
    acfg = cfg.association(tau=max(grid))
    sets = build_training_sets(cfg.student_cam, dets, cams, acfg, frames=frames)
    n_gt = count_gt_pairs(cfg.student_cam, dets, acfg, frames=frames)
    rows = []
    for tau in grid:
        acc = select_pairs(sets.gated_pairs, tau)
        pr = em.association_pr([p.seed_ids for p in acc], n_gt)
        rows.append({"tau": float(tau), **pr})
    return sets, rows


def choose_tau(rows) -> float:
    """F1-best tau; ties go to the smallest value."""
    best = max(rows, key=lambda r: (r["f1"], -r["tau"]))
    return best["tau"]


def stage_associate(cfg: PipelineConfig, root: Path) -> None:
    _require(root / "labels", root / "dataset" / "calib.json")
    dets = _read_detections(root / "labels")
    cams = load_calibration(root / "dataset" / "calib.json")
    blocks = split_frames(cfg.scene.n_frames, cfg.split)
    sweep = {}
    if cfg.tau is None:
        _, sweep["val"] = _association_sweep(cfg, dets, cams, blocks["val"], cfg.tau_grid)
        tau = choose_tau(sweep["val"])
    else:
        tau = float(cfg.tau)
    acfg = cfg.association(tau=tau)
    sets = build_training_sets(cfg.student_cam, dets, cams, acfg, frames=blocks["train"])
    write_training_sets(sets, root / "sets", acfg)
    dump_json({"tau": tau, "selected_on": "val" if cfg.tau is None else "config", "sweep": sweep}, root / "sets" / "tau_sweep.json")


def stage_train(cfg: PipelineConfig, root: Path) -> None:
    _require(root / "sets" / "manifest.json", root / "dataset" / "source.jsonl")
    sets = read_training_sets(root / "sets" / "manifest.json")
    X0, y0 = _read_source(root / "dataset" / "source.jsonl")
    n_classes = cfg.scene.n_classes + 1
    base = fit_supervised(X0, y0, n_classes, d_h=cfg.d_h, seed=cfg.seed)
    result = train_two_phase(sets, cfg.training(), init=base, n_classes=n_classes)
    out = root / "model"
    out.mkdir(parents=True, exist_ok=True)
    save_params(base, out / "base_params.json")
    save_params(result.params, out / "params.json")
    write_losses(result.losses, out / "losses.csv")
    dump_json({"initial_loss": result.initial_loss, "warnings": result.warnings}, out / "train_meta.json")


def _heldout(dets, gt_records, cam, frames):
    classes = _identity_classes(gt_records)
    test = [d for d in dets.get(cam, []) if d.frame in frames and d.gt_identity is not None]
    X = np.array([d.embedding for d in test], dtype=float)
    y = np.array([classes[d.gt_identity] for d in test], dtype=int)
    return X, y


def stage_eval(cfg: PipelineConfig, root: Path) -> None:
    _require(root / "labels", root / "dataset" / "gt.jsonl", root / "sets" / "manifest.json", root / "model" / "params.json")
    dets = _read_detections(root / "labels")
    cams = load_calibration(root / "dataset" / "calib.json")
    gt_records = read_gt(root / "dataset" / "gt.jsonl")
    blocks = split_frames(cfg.scene.n_frames, cfg.split)
    manifest = json.loads((root / "sets" / "manifest.json").read_text())
    tau_info = json.loads((root / "sets" / "tau_sweep.json").read_text())
    tau = tau_info["tau"]

    all_labels = [d for cam in sorted(dets) for d in dets[cam]]
    gt_all = _gt_index(gt_records)
    tq = em.tier_quality(all_labels, gt_all)
    ap = em.average_precision(all_labels, gt_all)

    _, test_sweep = _association_sweep(cfg, dets, cams, blocks["test"], sorted(set(cfg.tau_grid) | {tau}))
    assoc = next(r for r in test_sweep if r["tau"] == tau)

    X, y = _heldout(dets, gt_records, cfg.student_cam, blocks["test"])
    params = load_params(root / "model" / "params.json")
    base = load_params(root / "model" / "base_params.json")
    stats = manifest["stats"]
    report = em.EvalReport(
        tier_quality=tq,
        association={**assoc, "split": "test"},
        pruning_factor=stats["pruning_factor"],
        ap_at_08=ap,
        counts={
            "gt_pairs": assoc["n_gt"],
            "candidates": stats["n_candidates"],
            "accepted": assoc["n_accepted"],
            "ncs_pairs": stats["n_ncs"],
            "cs_labels": stats["n_cs"],
            "heldout": int(len(y)),
        },
        extras={
            "tau": tau,
            "tau_selected_on": tau_info["selected_on"],
            "tau_sweep": {"val": tau_info["sweep"].get("val", []), "test": test_sweep},
            "heldout_accuracy": accuracy(params, X, y),
            "base_accuracy": accuracy(base, X, y),
            "student_cam": cfg.student_cam,
            "splits": {k: [v.start, v.stop] for k, v in blocks.items()},
            "warnings": manifest.get("warnings", []),
            "ablation": {"no_phase1": cfg.no_phase1, "train_backbone_with_confident": cfg.train_backbone_with_confident},
        },
    )
    dump_json(report.to_dict(), root / "report.json")


def _csv(rows, header, path) -> None:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join("" if r.get(h) is None else repr(r[h]) if isinstance(r[h], float) else str(r[h]) for h in header))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def render_report(root, scene: SceneConfig | None = None) -> str:
    """Write the summary and CSV tables under ``root/report`` and return the summary text."""
    root = Path(root)
    _require(root / "report.json", root / "model" / "losses.csv")
    rep = json.loads((root / "report.json").read_text())
    if scene is None:
        scene_path = root / "dataset" / "scene.json"
        scene = SceneConfig.from_dict(json.loads(scene_path.read_text())["config"]) if scene_path.exists() else SceneConfig()
    out = root / "report"
    out.mkdir(parents=True, exist_ok=True)

    tq = rep["tier_quality"]
    tier_rows = [{"tier": t, **tq[t]} for t in ("confident", "uncertain", "combined")]
    _csv(tier_rows, ["tier", "n", "tp", "precision", "recall"], out / "tier_quality.csv")
    sweep_rows = [{"split": s, **r} for s in ("val", "test") for r in rep["extras"]["tau_sweep"].get(s, [])]
    _csv(sweep_rows, ["split", "tau", "precision", "recall", "f1", "n_accepted", "n_correct", "n_gt"], out / "association_pr.csv")
    (out / "losses.csv").write_text((root / "model" / "losses.csv").read_text())
    sep = [{"style_scale": s, "oracle_f1": oracle_reid_f1(scene, s, 500, 0)} for s in SEPARABILITY_SCALES]
    _csv(sep, ["style_scale", "oracle_f1"], out / "separability.csv")

    a = rep["association"]
    ex = rep["extras"]
    lines = [
        f"student camera: {ex['student_cam']}",
        f"pruning factor: {rep['pruning_factor']:.2f}x",
        f"detector AP@0.8: {rep['ap_at_08']:.3f}",
        "tier quality (IoU 0.8):",
    ]
    for r in tier_rows:
        lines.append(f"  {r['tier']:<10} n={r['n']:<6} precision={_fmt(r['precision'])} recall={_fmt(r['recall'])}")
    lines += [
        f"association on {a['split']} at tau={ex['tau']} ({ex['tau_selected_on']}): "
        f"precision={_fmt(a['precision'])} recall={_fmt(a['recall'])} f1={_fmt(a['f1'])}",
        f"held-out accuracy: {_fmt(ex['heldout_accuracy'])} (base model {_fmt(ex['base_accuracy'])})",
    ]
    for w in ex.get("warnings", []):
        lines.append(f"WARNING: {w}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    return text


def stage_report(cfg: PipelineConfig, root: Path) -> None:
    render_report(root, cfg.scene)


STAGE_FUNCS = {
    "simulate": stage_simulate,
    "split-labels": stage_split_labels,
    "associate": stage_associate,
    "train": stage_train,
    "eval": stage_eval,
    "report": stage_report,
}
STAGE_OUTPUTS = {
    "simulate": "dataset/scene.json",
    "split-labels": "labels",
    "associate": "sets/tau_sweep.json",
    "train": "model/train_meta.json",
    "eval": "report.json",
    "report": "report/summary.txt",
}


def run_stage(name: str, cfg: PipelineConfig, root) -> None:
    try:
        STAGE_FUNCS[name](cfg, Path(root))
    except ConfigError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig, root, resume: bool = False) -> Path:
    """Run every stage in order; with ``resume`` skip stages whose outputs exist.

    A resumed run only skips work when the stored config matches ``cfg``.
    """
    cfg.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg_path = root / "config.json"
    if resume and cfg_path.exists() and json.loads(cfg_path.read_text()) != _plain(cfg.to_dict()):
        log.info("config changed; rerunning all stages")
        resume = False
    dump_json(cfg.to_dict(), cfg_path)
    for name in STAGES:
        if resume and (root / STAGE_OUTPUTS[name]).exists():
            log.info("skipping %s (outputs present)", name)
            continue
        log.info("running %s", name)
        run_stage(name, cfg, root)
    return root
