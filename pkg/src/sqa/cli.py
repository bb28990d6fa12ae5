"""Command-line entry points: score, train, eval, serve, gen-corpus.

Exit codes: 0 ok, 1 partial failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob as globlib
import json
import logging
import os
import sys

from . import __version__
from .audio_io import load_wav
from .dataset import SynthSpec, generate_synthetic_corpus, read_manifest, write_manifest
from .errors import SqaError
from .evaluate import ScorePair, correlation_report
from .model import (
    TrainConfig,
    build_model,
    load_weights,
    model_from_bundle,
    save_weights,
    score_clip,
    train,
)

log = logging.getLogger("sqa")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


def _setup_logging():
    level = {"debug": logging.DEBUG, "info": logging.INFO,
             "warn": logging.WARNING}.get(os.environ.get("SQA_LOG", "warn"), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _resolve_inputs(patterns) -> list[str]:
    paths = []
    for pattern in patterns:
        if os.path.isdir(pattern):
            paths.extend(sorted(globlib.glob(os.path.join(pattern, "**", "*.wav"),
                                             recursive=True)))
        elif any(ch in pattern for ch in "*?["):
            paths.extend(sorted(globlib.glob(pattern)))
        else:
            paths.append(pattern)
    return paths


def cmd_score(args) -> int:
    paths = _resolve_inputs(args.paths)
    if not paths:
        print("error: no inputs matched", file=sys.stderr)
        return EXIT_USAGE
    try:
        model = model_from_bundle(load_weights(args.weights))
    except SqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    failures = 0
    for path in paths:
        try:
            clip = load_wav(path)
            scores = score_clip(model, clip)
        except SqaError as e:
            print(f"{path}: {e}", file=sys.stderr)
            failures += 1
            continue
        record = {"clip_id": clip.clip_id, "path": path, **scores.as_dict()}
        if args.json:
            print(json.dumps(record))
        else:
            rendered = "  ".join(f"{k.upper()}={v:.3f}"
                                 for k, v in scores.as_dict().items())
            print(f"{path}  {rendered}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_train(args) -> int:
    try:
        hyper = TrainConfig.from_file(args.config) if args.config else TrainConfig()
        if args.seed is not None:
            hyper = dataclasses.replace(hyper, seed=args.seed)
        manifest = read_manifest(args.manifest, split="train")
        val_manifest = (read_manifest(args.val_manifest, split="val")
                        if args.val_manifest else None)
    except SqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    model = build_model(hyper.model_config(), seed=hyper.seed)

    def progress(epoch, train_mse, val_mse):
        log.info("epoch %d train_mse=%.5f val_mse=%.5f", epoch, train_mse, val_mse)

    try:
        bundle, curve = train(model, manifest, hyper,
                              val_manifest=val_manifest, progress=progress)
    except SqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARTIAL

    save_weights(bundle, args.out)
    curve_path = args.curve or os.path.join(
        os.path.dirname(os.path.abspath(args.out)), "loss_curve.csv")
    with open(curve_path, "w") as f:
        f.write("epoch,train_mse,val_mse\n")
        for epoch, train_mse, val_mse in curve:
            f.write(f"{epoch},{train_mse:.6f},{val_mse:.6f}\n")
    print(f"wrote {args.out} (checksum {bundle.checksum()[:16]}) and {curve_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        manifest = read_manifest(args.manifest, split="test")
        model = model_from_bundle(load_weights(args.weights))
    except SqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if not manifest.clips:
        print("error: manifest is empty", file=sys.stderr)
        return EXIT_USAGE

    pairs = []
    failures = 0
    for c in manifest.clips:
        try:
            scores = score_clip(model, load_wav(c.clip_path))
        except SqaError as e:
            print(f"{c.clip_id}: {e}", file=sys.stderr)
            failures += 1
            continue
        predicted = (scores.sig,
                     scores.bak if scores.bak is not None else float("nan"),
                     scores.ovrl if scores.ovrl is not None else float("nan"))
        pairs.append(ScorePair(clip_id=c.clip_id, model_id=c.model_id,
                               human=(c.mos_sig, c.mos_bak, c.mos_ovrl),
                               predicted=predicted))
    if len(pairs) < 2:
        print("error: fewer than 2 clips scored", file=sys.stderr)
        return EXIT_PARTIAL

    report = correlation_report(pairs)
    if args.format == "json":
        print(report.to_json())
    elif args.format == "csv":
        print(report.to_csv(), end="")
    else:
        print(report.to_table(), end="")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_serve(args) -> int:
    from .service import ScoringService, serve_forever

    try:
        bundle = load_weights(args.weights)
        model = model_from_bundle(bundle)
    except SqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    service = ScoringService(model, bundle, max_duration_s=args.max_duration)
    serve_forever(service, args.host, args.port)
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    spec = SynthSpec(num_models=args.models, clips_per_model=args.clips_per_model,
                     duration_s=args.duration, seed=args.seed)
    manifest = generate_synthetic_corpus(spec, args.out_dir, split=args.split)
    manifest_path = os.path.join(args.out_dir, f"{args.split}_manifest.csv")
    write_manifest(manifest, manifest_path)
    print(f"wrote {len(manifest)} clips under {args.out_dir}, manifest {manifest_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqa",
        description="Non-intrusive P.835 speech quality assessment toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score WAV files with a trained model")
    p.add_argument("paths", nargs="+", help="WAV paths, globs, or directories")
    p.add_argument("--weights", required=True)
    p.add_argument("--json", action="store_true", help="one JSON record per clip")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--config", help="flat key=value training config file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", required=True, help="output weight bundle path")
    p.add_argument("--curve", help="loss curve CSV (default: loss_curve.csv next to weights)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="correlation report for a labeled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--format", choices=["table", "csv", "json"], default="table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="local HTTP scoring service")
    p.add_argument("--weights", required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--max-duration", type=float, default=60.0,
                   help="per-request audio length cap, seconds")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gen-corpus", help="generate a synthetic rated corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--models", type=int, default=10)
    p.add_argument("--clips-per-model", type=int, default=50)
    p.add_argument("--duration", type=float, default=1.0, help="clip length, seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_gen_corpus)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
