"""Command-line interface.

Subcommands: synthgen, train, infer, eval, ablate, report. Every subcommand
accepts --config FILE (JSON) and --seed. Exit codes: 0 success, 2 config
error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datakit, evaluate, reports
from .errors import ConfigError, DataError, NumericAbort, OOVError
from .trainer import train, train_config_from_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return payload


def _synth_config(
    payload: dict, seed: int | None
) -> tuple[datakit.SynthConfig, int | None]:
    payload = dict(payload)
    if "motion_kinds" in payload:
        payload["motion_kinds"] = frozenset(payload["motion_kinds"])
    if "shape_palette" in payload:
        payload["shape_palette"] = tuple(
            (s, c) for s, c in payload["shape_palette"]
        )
    num_val = payload.pop("num_val_videos", None)
    try:
        cfg = datakit.SynthConfig(**payload)
    except TypeError as exc:
        raise ConfigError(f"bad synth config: {exc}") from exc
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg, num_val


def cmd_synthgen(args: argparse.Namespace) -> int:
    from dataclasses import replace

    payload = _load_config(args.config)
    cfg, num_val = _synth_config(payload.get("synth", payload), args.seed)
    out = Path(args.out)
    manifest = datakit.generate_synthetic_dataset(cfg, out / "train", split="train")
    print(f"train: {len(manifest.entries)} videos -> {out / 'train'}")
    if num_val:
        val_cfg = replace(cfg, num_videos=num_val, seed=cfg.seed + 1_000_003)
        val_manifest = datakit.generate_synthetic_dataset(
            val_cfg, out / "val", split="val"
        )
        print(f"val:   {len(val_manifest.entries)} videos -> {out / 'val'}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    payload = _load_config(args.config)
    cfg = train_config_from_dict(payload.get("train", payload))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    manifest = datakit.DatasetManifest.load(Path(args.data) / "manifest.json")
    result = train(cfg, manifest, args.out)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log:        {result.log_path}")
    print(f"final loss: {result.final_loss:.6f}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    from .inferpost import post_optimize, render_overlays, save_predictions, segment_video
    from .model import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    video_dir = Path(args.video)
    if not video_dir.is_dir():
        raise DataError(f"video directory {video_dir} does not exist")
    import numpy as np
    from PIL import Image

    frame_files = sorted(video_dir.glob("*.png"))
    if not frame_files:
        raise DataError(f"no frame PNGs in {video_dir}")
    frames = np.stack(
        [np.asarray(Image.open(p).convert("RGB")) for p in frame_files]
    ).astype(np.float32) / 255.0
    video = datakit.VideoSample(
        video_id=video_dir.name,
        frames=frames,
        gt_masks=np.zeros(frames.shape[:3], dtype=np.uint8),
        expression=args.expr,
        query_type="short",
        source="cli",
    )
    result = segment_video(model, video, args.expr)
    maskset = result.maskset
    if args.post_opt:
        maskset = post_optimize(video, maskset, result.selection, model)
    out = Path(args.out)
    save_predictions(video, result, maskset, out, args.expr)
    if args.overlays:
        render_overlays(video, maskset, out / f"{video.video_id}_overlays")
    print(f"answer: {result.generated_text}" + (" [forced]" if result.forced else ""))
    print(f"masks:  {out / video.video_id}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = datakit.DatasetManifest.load(args.manifest)
    digest = evaluate.config_digest(
        {"manifest": str(args.manifest), "pred": str(args.pred)}
    )
    report = evaluate.evaluate_benchmark(manifest, args.pred, digest)
    json_path, txt_path = report.save(args.out)
    print(txt_path.read_text())
    print(f"report: {json_path}")
    if report.has_errors:
        print("error: some predictions were missing or invalid", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    payload = _load_config(args.config)
    cfg = train_config_from_dict(payload.get("train", payload))
    if args.seed is not None:
        cfg.seed = args.seed
    axes = payload.get("axes", ["objective"])
    seeds = payload.get("seeds", [cfg.seed])
    data_dir = Path(args.data)
    train_manifest = datakit.DatasetManifest.load(data_dir / "train" / "manifest.json")
    val_manifest = datakit.DatasetManifest.load(data_dir / "val" / "manifest.json")
    result = evaluate.run_ablation(
        cfg, train_manifest, val_manifest, axes, seeds, args.out
    )
    json_path, txt_path = result.save(args.out)
    print(txt_path.read_text())
    print(f"table: {json_path}")
    return EXIT_NUMERIC if result.failed else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    written = reports.generate_report(args.run, args.out)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trkseg",
        description="language-instructed video object segmentation, desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("synthgen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthgen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset dir with manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="segment one video from frame PNGs")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--video", required=True, help="directory of frame PNGs")
    p.add_argument("--expr", required=True)
    p.add_argument("--post-opt", action="store_true", dest="post_opt")
    p.add_argument("--overlays", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare ablation cells")
    common(p)
    p.add_argument("--data", required=True, help="dir with train/ and val/ datasets")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render figures and tables for a run")
    common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OOVError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
