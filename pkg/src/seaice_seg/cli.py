"""Command-line entry point: ``seaice <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import labels as L
from .annotate import annotate_video
from .augment import derive_seed, occluded_dir, read_occluded_testset, write_occluded_testset
from .config import ConfigError, RunConfig, describe_defaults
from .dataset import (
    Manifest,
    SyntheticSceneSpec,
    build_manifest,
    list_frames,
    load_video,
    read_image,
    read_keyframes,
    read_label,
    sample_pairs,
    synthesize_scene,
    write_image,
    write_keyframes,
    write_label,
    write_video,
)
from .evaluation import EvalVideo, evaluate, format_table, write_records
from .geometry import field_preview, partition_preview, build_region_partition, build_threshold_field
from .model import build_model, flow_to_color, infer_video, load_checkpoint, make_predictor
from .train import seed_everything, train_loop

log = logging.getLogger("seaice_seg")


class CommandError(RuntimeError):
    pass


def _prepare_out(path: Path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise CommandError(f"output {path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require_out(args) -> Path:
    if args.out is None:
        raise CommandError(f"'{args.command}' needs --out")
    return Path(args.out)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
    log.info("resolved config:\n%s", cfg.dump())
    return cfg


def _seed(args, cfg: RunConfig) -> int:
    return args.seed if args.seed is not None else cfg.train.seed


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig) -> int:
    out = _prepare_out(_require_out(args), args.force)
    s = cfg.synth
    n_videos = args.videos if args.videos is not None else s.n_videos
    n_frames = args.frames if args.frames is not None else s.n_frames
    seed = _seed(args, cfg)
    for k in range(n_videos):
        vid = f"video{k:03d}"
        spec = SyntheticSceneSpec(
            seed=derive_seed(seed, "synth", k) % 2**31, n_frames=n_frames, height=s.height, width=s.width,
            flow=tuple(s.flow), noise_std=s.noise_std,
        )
        video = synthesize_scene(spec)
        write_video(out / vid, video.frames, video.labels)
        write_keyframes(out / "keyframes", vid, video.keyframes(cfg.annotate.keyframe_stride))
    print(f"wrote {n_videos} video(s) of {n_frames} frames to {out}")
    return 0


def cmd_annotate(args, cfg: RunConfig) -> int:
    video = Path(args.video)
    frames_dir = video / "frames" if (video / "frames").is_dir() else video
    items = list_frames(frames_dir)
    if not items:
        raise CommandError(f"no frames in {frames_dir}")
    vid = args.video_id or (video.name if frames_dir != video else video.parent.name)
    keyframes = read_keyframes(args.keyframes, vid)
    if not keyframes:
        raise CommandError(f"no keyframes for video '{vid}' in {args.keyframes}")
    frames = [read_image(p) for _, p in items]
    h, w = frames[0].shape[:2]
    model = cfg.camera.camera_model(h, w)
    out = _prepare_out(_require_out(args), args.force)
    labels = annotate_video(frames, keyframes, cfg.annotate, model)
    (out / "labels").mkdir()
    previews = out / "previews"
    previews.mkdir()
    for (_, p), lab in zip(items, labels):
        write_label(out / "labels" / f"{p.stem}.png", lab)
    _write_previews(out / "previews", items, frames, labels, model, cfg)
    print(f"annotated {len(labels)} frames into {out}")
    return 0


def _write_previews(previews: Path, items, frames, labels, model, cfg: RunConfig) -> None:
    """Label overlays per frame plus the distance regions and water threshold field."""
    previews.mkdir(parents=True, exist_ok=True)
    if labels is not None:
        for (_, p), frame, lab in zip(items, frames, labels):
            write_image(previews / f"{p.stem}.png", L.overlay(frame, lab))
    partition = build_region_partition(model, cfg.annotate.n_regions)
    field = build_threshold_field(partition, cfg.annotate.water_threshold_near, cfg.annotate.water_threshold_far)
    write_image(previews / "regions.png", np.repeat(partition_preview(partition)[..., None], 3, axis=2))
    write_image(previews / "water_threshold.png", np.repeat(field_preview(field)[..., None], 3, axis=2))


def cmd_preview(args, cfg: RunConfig) -> int:
    video = Path(args.video)
    frames_dir = video / "frames" if (video / "frames").is_dir() else video
    items = list_frames(frames_dir)
    if not items:
        raise CommandError(f"no frames in {frames_dir}")
    frames = [read_image(p) for _, p in items]
    labels_dir = Path(args.labels) if args.labels else (video / "labels" if (video / "labels").is_dir() else None)
    labels = None
    if labels_dir is not None:
        missing = [p.name for _, p in items if not (labels_dir / f"{p.stem}.png").exists()]
        if missing:
            raise CommandError(f"no label for frame(s) {', '.join(missing[:3])} in {labels_dir}")
        labels = [read_label(labels_dir / f"{p.stem}.png") for _, p in items]
    h, w = frames[0].shape[:2]
    out = _prepare_out(_require_out(args), args.force)
    _write_previews(out, items, frames, labels, cfg.camera.camera_model(h, w), cfg)
    print(f"previews written to {out}")
    return 0


def cmd_dataset(args, cfg: RunConfig) -> int:
    root = Path(args.root)
    video_dirs = sorted(p for p in root.iterdir() if (p / "frames").is_dir())
    if not video_dirs:
        raise CommandError(f"no video directories under {root}")
    val = set(filter(None, (args.val or "").split(",")))
    test = set(filter(None, (args.test or "").split(",")))
    names = {p.name for p in video_dirs}
    missing = (val | test) - names
    if missing:
        raise CommandError(f"unknown video id(s): {', '.join(sorted(missing))}")
    assignment = {n: "val" if n in val else "test" if n in test else "train" for n in names}
    manifest = build_manifest(video_dirs, assignment)
    out = Path(args.out) if args.out else root / "manifest.jsonl"
    if out.exists() and not args.force:
        raise CommandError(f"{out} exists; pass --force to overwrite")
    manifest.save(out)
    print(f"manifest with {manifest.counts()} frames written to {out}")
    return 0


def cmd_occlude(args, cfg: RunConfig) -> int:
    frames_dir = Path(args.frames)
    out = write_occluded_testset(frames_dir, args.level, _seed(args, cfg), force=args.force)
    print(f"occluded set written to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    manifest = Manifest.load(args.manifest)
    stride = cfg.train.pair_stride
    train_pairs = list(sample_pairs(manifest, "train", stride))
    val_pairs = list(sample_pairs(manifest, "val", stride))
    out = _prepare_out(_require_out(args), args.force)
    (out / "run_config.yaml").write_text(cfg.dump())
    seed_everything(cfg.train.seed)
    kind = args.kind or cfg.network.kind
    model = build_model(kind, cfg.model)
    result = train_loop(model, train_pairs, val_pairs, cfg.train, cfg.augment, out)
    print(f"best epoch {result.best_epoch} val loss {result.best_val_loss:.4f}; checkpoints in {out}")
    return 0


def _eval_videos(manifest: Manifest, split: str, level: str) -> list:
    videos = []
    for vid, recs in sorted(manifest.videos(split).items()):
        frames, labels = load_video(recs)
        masks = None
        if level != "none":
            frames_dir = Path(recs[0].frame_path).parent
            occ = occluded_dir(frames_dir, level)
            if not occ.is_dir():
                raise CommandError(f"no occluded set for video '{vid}' at level '{level}' ({occ} missing); run 'occlude' first")
            frames, masks = read_occluded_testset(occ)
            if len(frames) != len(labels):
                raise CommandError(f"occluded set {occ} has {len(frames)} frames, labels have {len(labels)}")
        videos.append(EvalVideo(frames, labels, masks, vid))
    if not videos:
        raise CommandError(f"split '{split}' is empty")
    return videos


def cmd_eval(args, cfg: RunConfig) -> int:
    model, payload = load_checkpoint(args.ckpt)
    videos = _eval_videos(Manifest.load(args.manifest), args.split, args.occlusion)
    overall, occ = evaluate(make_predictor(model), videos, args.occlusion)
    print(format_table({model.kind: [(overall, occ)]}))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"eval_{args.occlusion}.jsonl"
        if path.exists() and not args.force:
            raise CommandError(f"{path} exists; pass --force to overwrite")
        write_records(path, [overall, occ])
    return 0


def cmd_infer(args, cfg: RunConfig) -> int:
    model, _ = load_checkpoint(args.ckpt)
    items = list_frames(args.frames)
    if not items:
        raise CommandError(f"no frames in {args.frames}")
    frames = [read_image(p) for _, p in items]
    out = _prepare_out(_require_out(args), args.force)
    preds, flows = infer_video(model, frames, return_flows=True)
    for (_, p), lab in zip(items, preds):
        write_label(out / f"{p.stem}.png", lab)
    if args.flows and flows:
        (out / "flow").mkdir()
        for (_, p), flow in zip(items, flows):
            write_image(out / "flow" / f"{p.stem}.png", flow_to_color(flow))
    print(f"wrote {len(preds)} predictions to {out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "annotate": cmd_annotate,
    "preview": cmd_preview,
    "dataset": cmd_dataset,
    "occlude": cmd_occlude,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config with per-command sections")
    common.add_argument("--seed", type=int, help="global seed (overrides train.seed)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--out", help="output directory")
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(
        prog="seaice",
        description="Sea-ice annotation, occlusion benchmarks and UPerFlow / UPerNet segmentation.",
        epilog="config keys and defaults:\n" + describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic videos with ground truth and keyframes")
    p.add_argument("--frames", type=int)
    p.add_argument("--videos", type=int)

    p = sub.add_parser("annotate", parents=[common], help="label a video from manual keyframes")
    p.add_argument("--video", required=True, help="video directory (or its frames/ directory)")
    p.add_argument("--keyframes", required=True, help="directory of <video>_<frame>_<class>.png masks")
    p.add_argument("--video-id", help="id used in keyframe file names (default: directory name)")

    p = sub.add_parser("preview", parents=[common], help="render label overlays and the distance-region maps")
    p.add_argument("--video", required=True, help="video directory (or its frames/ directory)")
    p.add_argument("--labels", help="label directory (default: <video>/labels when present)")

    p = sub.add_parser("dataset", parents=[common], help="build a manifest from video directories")
    p.add_argument("--root", required=True)
    p.add_argument("--val", help="comma-separated video ids for validation")
    p.add_argument("--test", help="comma-separated video ids for testing")

    p = sub.add_parser("occlude", parents=[common], help="write a fixed occluded test set beside a frames directory")
    p.add_argument("--frames", required=True)
    p.add_argument("--level", required=True, choices=["light", "heavy"])

    p = sub.add_parser("train", parents=[common], help="train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=["uperflow", "upernet"])

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--occlusion", default="none", choices=["none", "light", "heavy"])
    p.add_argument("--split", default="test")

    p = sub.add_parser("infer", parents=[common], help="predict label maps for a frames directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--flows", action="store_true", help="also write forward-flow renderings")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CommandError, FileExistsError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
