"""Command line entry point: ``tryon synth-data | train | infer | eval | inspect``.

Exit codes: 0 success, 1 user error (bad arguments, config, data), 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import ENV_CONFIG, RunConfig, read_config_file, resolve
from .errors import ConfigurationError, ShapeError, TrainingError, ValidationError

log = logging.getLogger("tryon")

USER_ERRORS = (ConfigurationError, ValidationError, ShapeError, ValueError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args, **overrides) -> RunConfig:
    path = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
    values = read_config_file(path) if path else {}
    if getattr(args, "profile", None):
        overrides["profile"] = args.profile
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return resolve(values, **overrides)


def cmd_synth_data(args) -> int:
    from .data import generate_synthetic

    cfg = _config(args, num_records=args.records, record_frames=args.frames,
                  height=args.height, width=args.width)
    manifest = generate_synthetic(args.out, cfg.num_records, cfg.record_frames, cfg.height,
                                  cfg.width, seed=cfg.seed)
    print(f"wrote {len(manifest.records)} records ({cfg.record_frames} frames, "
          f"{cfg.height}x{cfg.width}) to {Path(args.out) / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    from .data import load_manifest, load_record, samples_from
    from .pipeline import build_model, save_model
    from .training import ImageDataset, VideoDataset, train

    cfg = _config(args, total_steps=args.steps)
    manifest_path = args.manifest or (Path(args.config).parent / "manifest.json" if args.config else None)
    if manifest_path is None:
        raise ConfigurationError("train needs --manifest")
    manifest = load_manifest(manifest_path)
    if not manifest.records:
        raise ValidationError("manifest has no records")
    if tuple(manifest.resolution) != (cfg.height, cfg.width):
        raise ConfigurationError(f"manifest resolution {manifest.resolution} != config "
                                 f"{(cfg.height, cfg.width)}")
    samples = samples_from([load_record(manifest, r) for r in manifest.records], cfg.include_swaps)
    model = build_model(cfg)
    print(f"training {cfg.profile} model for {cfg.total_steps} steps (lr={cfg.lr:g}, "
          f"lambda={cfg.image_threshold}, N={cfg.frames}, mode={cfg.mode}, "
          f"garment_encoder_mode={cfg.garment_encoder_mode})")
    history = train(model, ImageDataset(samples), VideoDataset(samples), cfg.train, cfg.schedule(),
                    out_dir=args.out, save=lambda path, step: save_model(path, model, cfg, step))
    print(f"final loss {history[-1][1]:.5f}; checkpoints and loss.csv in {args.out}")
    return 0


def _find_record(manifest, key: str):
    for rec in manifest.records:
        if rec.id == key:
            return rec
    if key.isdigit() and int(key) < len(manifest.records):
        return manifest.records[int(key)]
    raise ValidationError(f"no record {key!r} in manifest")


def cmd_infer(args) -> int:
    from . import video_io
    from .data import load_manifest, load_record
    from .pipeline import load_model, try_on

    model, cfg = load_model(args.checkpoint)
    over = {k: v for k, v in {"steps": args.steps, "window": args.window, "stride": args.stride,
                              "seed": args.seed}.items() if v is not None}
    try:
        cfg = dataclasses.replace(cfg, **over).validate()
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    manifest = load_manifest(args.manifest)
    record = load_record(manifest, _find_record(manifest, args.record))
    video = try_on(model, record, cfg.schedule(), cfg.sampler, seed=cfg.seed, garment=args.garment,
                   clip_denoised=cfg.clip_denoised)
    video_io.save_video(args.out, video, factor=cfg.codec_factor)
    path = "sliding-window" if video.shape[0] > cfg.window else "single-window"
    print(f"wrote {video.shape[0]} frames to {args.out} ({path}, window={cfg.window}, stride={cfg.stride})")
    return 0


def _load_clips(directory: Path):
    from . import video_io

    directory = Path(directory)
    if video_io.frame_files(directory):
        return [video_io.load_video(directory, mask=False)]
    subdirs = sorted(p for p in directory.iterdir() if p.is_dir()) if directory.is_dir() else []
    clips = [video_io.load_video(p, mask=False) for p in subdirs if video_io.frame_files(p)]
    if not clips:
        raise FileNotFoundError(f"no frames found under {directory}")
    return clips


def evaluate(generated: Path, reference: Path, extractor_dim: int = 32, extractor_seed: int = 0) -> dict:
    from .metrics import RandomConv3DExtractor, video_ssim, vfid

    gen, ref = _load_clips(generated), _load_clips(reference)
    if len(gen) != len(ref):
        raise ValidationError(f"{len(gen)} generated clips vs {len(ref)} reference clips")
    scores = []
    for g, r in zip(gen, ref):
        if g.shape != r.shape:
            raise ValidationError(f"clip shapes differ: {tuple(g.shape)} vs {tuple(r.shape)}")
        scores += video_ssim(g, r)
    extractor = RandomConv3DExtractor(extractor_dim, extractor_seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        distance = vfid(gen, ref, extractor)
    return {
        "ssim_mean": float(np.mean(scores)),
        "ssim_std": float(np.std(scores)),
        "vfid": distance,
        "clip_counts": {"generated": len(gen), "reference": len(ref)},
        "extractor_id": extractor.name,
        "clip_protocol": "whole-record",
        "warnings": sorted({str(w.message) for w in caught}),
    }


def cmd_eval(args) -> int:
    report = evaluate(args.generated, args.reference, args.extractor_dim, args.extractor_seed)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_inspect(args) -> int:
    if args.manifest:
        from .data import load_manifest

        m = load_manifest(args.manifest)
        info = {"records": len(m.records), "resolution": list(m.resolution), "source": m.source,
                "categories": sorted({r.category for r in m.records}),
                "frames": sorted({r.frame_count for r in m.records})}
    else:
        from .pipeline import build_model, load_model

        if args.checkpoint:
            model, cfg = load_model(args.checkpoint)
        else:
            cfg = _config(args)
            model = build_model(cfg)
        info = {
            "config": cfg.to_dict(),
            "parameters": {name: sum(p.numel() for p in mod.parameters())
                           for name, mod in model.named_children()},
            "unet_in_channels": model.unet.in_channels,
            "attention_sites": model.unet.site_ids(),
            "site_shapes": model.unet.site_shapes(cfg.height // cfg.codec_factor,
                                                  cfg.width // cfg.codec_factor),
        }
    sys.stdout.write(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tryon", description="Video virtual try-on diffusion toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help=f"JSON/TOML config file (default: ${ENV_CONFIG})")
        sp.add_argument("--profile", choices=["toy", "paper-shaped"])
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth-data", help="generate a synthetic try-on dataset")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--records", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="joint image-video training")
    common(s)
    s.add_argument("--manifest")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--steps", type=int, help="total training steps")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="generate a try-on video for one record")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--record", required=True, help="record id or index")
    s.add_argument("--garment", choices=["own", "alt"], default="own")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, help="DDIM steps")
    s.add_argument("--window", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="SSIM / VFID between generated and reference frames")
    s.add_argument("--generated", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--report")
    s.add_argument("--extractor-dim", type=int, default=32)
    s.add_argument("--extractor-seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="describe a config, checkpoint or manifest")
    common(s)
    s.add_argument("--checkpoint")
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
