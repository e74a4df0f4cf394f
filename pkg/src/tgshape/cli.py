"""Command-line entry points for the full pipeline.

Subcommands cover corpus building, the four training stages, generation,
text-driven edits, mesh export, metric evaluation, and the HTTP service.
Every subcommand honors --seed, --config, and --profile.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import Profile, get_profile, load_config
from .corpus import CorpusConfig, generate_synthetic_corpus, load_manifest
from .infer import InferenceSession, sample_seed
from .mesh import save_ply
from .train import STAGES, group_records, run_stage
from .voxels import load_voxels, save_voxels

TRAIN_COMMANDS = {"train-ae": "ae", "train-text": "text",
                  "train-imle": "imle", "train-mani": "manipulation"}
ALL_METRICS = ("iou", "emd", "rprec", "is", "fpd", "consistency")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="override the profile rng seed")
    p.add_argument("--config", default=None,
                   help="INI config file (takes precedence over --profile)")
    p.add_argument("--profile", choices=("paper", "desk", "test"),
                   default="desk", help="named scale preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tgshape",
        description="text-guided colored 3D shape generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", help="write a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None)
    _add_common(p)

    for name, stage in TRAIN_COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {stage} training stage")
        p.add_argument("--corpus", required=True)
        p.add_argument("--out", required=True)
        _add_common(p)

    p = sub.add_parser("generate", help="sample shapes for a caption")
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--text", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("manipulate", help="before/after pair for a text edit")
    p.add_argument("--run", required=True)
    p.add_argument("--original", required=True)
    p.add_argument("--edited", required=True)
    p.add_argument("--mode", choices=("shape-edit", "color-edit"),
                   required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("extract-mesh", help="export a generated shape as PLY")
    p.add_argument("--run", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--iso", type=float, default=0.5)
    _add_common(p)

    p = sub.add_parser("eval", help="compute metrics for a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--metrics", default=",".join(ALL_METRICS),
                   help="comma-separated subset of " + ",".join(ALL_METRICS))
    p.add_argument("--out", default=None, help="report path (JSON)")
    p.add_argument("--samples", type=int, default=16,
                   help="generated sample budget for distribution metrics")
    _add_common(p)

    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--run", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    _add_common(p)
    return parser


def resolve_profile(args: argparse.Namespace) -> Profile:
    if getattr(args, "config", None):
        profile = load_config(args.config)
    else:
        profile = get_profile(getattr(args, "profile", "desk"))
    if getattr(args, "seed", None) is not None:
        profile = dataclasses.replace(profile, seed=args.seed)
    return profile


def _cmd_make_corpus(args, profile: Profile) -> int:
    cfg = CorpusConfig(
        count=args.count if args.count is not None else profile.corpus_count,
        resolution=(args.resolution if args.resolution is not None
                    else profile.resolution),
        out_dir=args.out)
    records = generate_synthetic_corpus(cfg, rng_seed=profile.seed)
    shapes = len({r.voxel_path for r in records})
    print(f"wrote {shapes} shapes ({len(records)} captions) to {args.out}")
    return 0


def _cmd_train(stage: str, args, profile: Profile) -> int:
    report = run_stage(stage, profile, args.corpus, args.out)
    last = report.epochs[-1] if report.epochs else None
    losses = (" ".join(f"{k}={v:.4f}" for k, v in last.losses.items())
              if last else "no epochs")
    print(f"{stage}: {len(report.epochs)} epochs, final {losses}")
    print(f"checkpoint: {report.checkpoint_path}")
    return 0


def _cmd_generate(args, profile: Profile) -> int:
    session = InferenceSession.from_run_dir(args.run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shapes = session.generate(args.text, args.count, profile.seed,
                              args.resolution)
    rows = []
    for i, shape in enumerate(shapes):
        path = out / f"sample_{i:03d}.tgsv"
        save_voxels(shape.grid, path)
        rows.append({"file": path.name, "seed": shape.noise_seed,
                     "caption": shape.caption,
                     "resolution": shape.grid.resolution})
        print(f"{path}  seed={shape.noise_seed}")
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return 0


def _cmd_manipulate(args, profile: Profile) -> int:
    session = InferenceSession.from_run_dir(args.run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    before, after = session.manipulate(args.original, args.edited, args.mode,
                                       profile.seed, args.resolution)
    save_voxels(before.grid, out / "before.tgsv")
    save_voxels(after.grid, out / "after.tgsv")
    row = {"mode": args.mode, "seed": before.noise_seed,
           "original": args.original, "edited": args.edited,
           "resolution": before.grid.resolution}
    (out / "manifest.jsonl").write_text(json.dumps(row) + "\n",
                                        encoding="utf-8")
    print(f"wrote before.tgsv and after.tgsv (seed={before.noise_seed})")
    return 0


def _cmd_extract_mesh(args, profile: Profile) -> int:
    session = InferenceSession.from_run_dir(args.run)
    r = args.resolution or session.profile.resolution
    words, text_feat = session.text_features(args.text)
    feat = session.feature_from_noise(text_feat, sample_seed(profile.seed, 0))
    mesh = session.extract_mesh(feat, words, r, args.iso)
    save_ply(mesh, args.out)
    print(f"{args.out}: {mesh.n_vertices} vertices, {mesh.n_faces} faces")
    return 0


def _cmd_eval(args, profile: Profile) -> int:
    from .evalrun import evaluate_run
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = sorted(set(names) - set(ALL_METRICS))
    if unknown:
        raise ValueError(f"unknown metrics: {', '.join(unknown)}")
    report = evaluate_run(args.run, args.corpus, names,
                          samples=args.samples, seed=profile.seed)
    width = max(len(n) for n in names)
    for name in names:
        entry = report[name]
        shown = entry.get("value", entry.get("error"))
        print(f"{name:<{width}}  {shown}")
    out = Path(args.out) if args.out else Path(args.run) / "eval-report.json"
    out.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"report: {out}")
    return 0


def _cmd_serve(args, profile: Profile) -> int:
    import os

    import uvicorn

    from .service import build_app

    run_dir = args.run or os.environ.get("TGSHAPE_RUN_DIR")
    if not run_dir:
        raise ValueError("serve needs --run or TGSHAPE_RUN_DIR")
    port = args.port if args.port is not None else int(
        os.environ.get("TGSHAPE_PORT", "8765"))
    app = build_app(run_dir)
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        profile = resolve_profile(args)
        if args.command == "make-corpus":
            return _cmd_make_corpus(args, profile)
        if args.command in TRAIN_COMMANDS:
            return _cmd_train(TRAIN_COMMANDS[args.command], args, profile)
        if args.command == "generate":
            return _cmd_generate(args, profile)
        if args.command == "manipulate":
            return _cmd_manipulate(args, profile)
        if args.command == "extract-mesh":
            return _cmd_extract_mesh(args, profile)
        if args.command == "eval":
            return _cmd_eval(args, profile)
        if args.command == "serve":
            return _cmd_serve(args, profile)
        parser.error(f"unhandled command {args.command}")
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
