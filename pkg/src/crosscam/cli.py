"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 stage failure. Relative
output paths resolve under ``$CROSSCAM_ARTIFACTS`` when it is set.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evalmetrics as em
from .association import DEFAULT_TAU, AssociationConfig, build_training_sets, count_gt_pairs, read_training_sets, write_training_sets
from .errors import ConfigError
from .geometry import load_calibration
from .labels import read_jsonl, tier_all, write_jsonl
from .pipeline import PipelineConfig, StageError, dump_json, render_report, run_pipeline
from .simulator import SceneConfig, gen_scene, gen_source_dataset, read_gt, render_detections, write_dataset
from .trainer import TrainConfig, load_params, save_params, train_two_phase, write_losses

log = logging.getLogger("crosscam")

ENV_ROOT = "CROSSCAM_ARTIFACTS"
EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


def _path(p) -> Path:
    p = Path(p)
    root = os.environ.get(ENV_ROOT)
    return p if p.is_absolute() or not root else Path(root) / p


def _load_config(path) -> PipelineConfig:
    return PipelineConfig.load(path) if path else PipelineConfig()


def _overrides(cfg: PipelineConfig, args, names) -> PipelineConfig:
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    return cfg


def cmd_simulate(args) -> None:
    scene = SceneConfig()
    if args.config:
        d = json.loads(Path(args.config).read_text())
        scene = PipelineConfig.from_dict(d).scene if "scene" in d or "schema_version" in d else SceneConfig.from_dict(d)
    scene.validate()
    seed = scene.seed if args.seed is None else args.seed
    gt, cams = gen_scene(scene, seed)
    dets = render_detections(gt, cams, scene, seed)
    write_dataset(_path(args.out), gt, cams, dets, scene, seed, gen_source_dataset(gt, scene, 2000, seed))


def cmd_split_labels(args) -> None:
    if not 0.0 < args.t_cls < 1.0:
        raise ConfigError(f"t_cls={args.t_cls} must lie in (0, 1)")
    src = _path(args.detections)
    out = _path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = [src] if src.is_file() else sorted(src.glob("*.jsonl"))
    for f in files:
        write_jsonl(tier_all(read_jsonl(f), args.t_cls), out / f.name, with_tier=True)


def cmd_associate(args) -> None:
    cams = load_calibration(_path(args.calib))
    src = _path(args.detections)
    dets = {p.stem: read_jsonl(p) for p in sorted(src.glob("*.jsonl"))}
    try:
        cfg = AssociationConfig(t_cls=args.t_cls, epsilon=args.epsilon, tau=args.tau, horizon=args.horizon, window=args.w)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sets = build_training_sets(args.student_cam, dets, cams, cfg)
    write_training_sets(sets, _path(args.out), cfg)
    for w in sets.warnings:
        print(f"WARNING: {w}", file=sys.stderr)


def cmd_train(args) -> None:
    cfg = TrainConfig(epochs_p1=args.epochs_p1, epochs_p2=args.epochs_p2, lr=args.lr, batch=args.batch,
                      seed=args.seed, skip_phase1=args.no_phase1, symmetric=args.symmetric)
    if cfg.lr <= 0 or cfg.batch < 1:
        raise ConfigError("lr must be positive and batch at least 1")
    sets = read_training_sets(_path(args.sets))
    init = load_params(_path(args.init)) if args.init else None
    result = train_two_phase(sets, cfg, init=init)
    out = _path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(result.params, out / "params.json")
    write_losses(result.losses, out / "losses.csv")
    for w in result.warnings:
        print(f"WARNING: {w}", file=sys.stderr)


def cmd_eval(args) -> None:
    pred = _path(args.pred)
    labels = [d for p in sorted(pred.glob("*.jsonl")) for d in read_jsonl(p)]
    gt = {}
    for r in read_gt(_path(args.gt)):
        gt.setdefault((r["camera_id"], r["frame"]), []).append(r["bbox"])
    labels = tier_all(labels, args.t_cls)
    extras = {}
    manifest = pred / "manifest.json" if args.sets is None else _path(args.sets)
    assoc, pruning, counts = {}, 1.0, {}
    if manifest.exists():
        m = json.loads(manifest.read_text())
        sets = read_training_sets(manifest)
        acfg = AssociationConfig(**m["config"]) if m.get("config") else AssociationConfig()
        by_cam = {}
        for d in labels:
            by_cam.setdefault(d.camera_id, []).append(d)
        frames = range(*m["stats"]["frames"])
        n_gt = count_gt_pairs(sets.student_cam, by_cam, acfg, frames=frames)
        assoc = em.association_pr([p.seed_ids for p in sets.ncs_pairs], n_gt)
        pruning = m["stats"]["pruning_factor"]
        counts = {"candidates": m["stats"]["n_candidates"], "accepted": m["stats"]["n_ncs"]}
        extras["warnings"] = m.get("warnings", [])
    report = em.EvalReport(em.tier_quality(labels, gt), assoc, pruning, em.average_precision(labels, gt), counts, extras)
    dump_json(report.to_dict(), _path(args.out))


def cmd_report(args) -> None:
    print(render_report(_path(args.artifacts)), end="")


def cmd_run(args) -> None:
    cfg = _load_config(args.config)
    _overrides(cfg, args, ["seed", "student_cam", "t_cls", "epsilon", "tau", "horizon", "lr", "batch", "epochs_p1", "epochs_p2"])
    if args.no_phase1:
        cfg.no_phase1 = True
    if args.train_backbone_with_confident:
        cfg.train_backbone_with_confident = True
    root = run_pipeline(cfg, _path(args.out), resume=args.resume)
    print((root / "report" / "summary.txt").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crosscam", description="Cross-camera pseudo-label pipeline on a synthetic scene.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("split-labels", help="tier detections into confident and uncertain")
    p.add_argument("--detections", required=True, help="a detections JSONL file or a directory of them")
    p.add_argument("--t-cls", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split_labels)

    p = sub.add_parser("associate", help="build cross-camera training sets for one student camera")
    p.add_argument("--calib", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--student-cam", required=True)
    p.add_argument("--t-cls", type=float, default=0.8)
    p.add_argument("--epsilon", type=float, default=6.0)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--horizon", type=int, default=4)
    p.add_argument("--w", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_associate)

    p = sub.add_parser("train", help="two-phase training on a training-sets manifest")
    p.add_argument("--sets", required=True)
    p.add_argument("--init", help="params JSON to start from (default: random init)")
    p.add_argument("--epochs-p1", type=int, default=30)
    p.add_argument("--epochs-p2", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-phase1", action="store_true")
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score tiered detections against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--sets", help="training-sets manifest supplying pruning stats")
    p.add_argument("--t-cls", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summary and CSV tables for an artifacts directory")
    p.add_argument("artifacts")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--student-cam")
    p.add_argument("--t-cls", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs-p1", type=int)
    p.add_argument("--epochs-p2", type=int)
    p.add_argument("--no-phase1", action="store_true")
    p.add_argument("--train-backbone-with-confident", action="store_true")
    p.add_argument("--resume", action="store_true", help="skip stages whose outputs already exist")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:  # single-stage subcommands report their own name
        print(f"error: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
