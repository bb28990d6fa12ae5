#!/usr/bin/env python3
"""End-to-end synthetic experiment: generate a rated corpus, train the
quarter-width 1-s model, and print the held-out correlation report.

This is the same procedure as the end-to-end acceptance test, exposed as a
script so the corpus, weights, and report land somewhere inspectable.

Example:
    python3 scripts/run_end_to_end.py --work-dir /tmp/sqa_e2e
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from sqa.audio_io import load_wav
from sqa.dataset import SynthSpec, generate_synthetic_corpus, write_manifest
from sqa.evaluate import ScorePair, correlation_report
from sqa.model import TrainConfig, build_model, save_weights, score_clip, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work-dir", required=True)
    ap.add_argument("--train-models", type=int, default=20)
    ap.add_argument("--train-clips", type=int, default=100)
    ap.add_argument("--test-models", type=int, default=10)
    ap.add_argument("--test-clips", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=11)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--channel-scale", type=float, default=0.25)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    t0 = time.time()
    train_spec = SynthSpec(num_models=args.train_models,
                           clips_per_model=args.train_clips,
                           duration_s=1.0, seed=11)
    test_spec = SynthSpec(num_models=args.test_models,
                          clips_per_model=args.test_clips,
                          duration_s=1.0, seed=12)
    train_man = generate_synthetic_corpus(
        train_spec, os.path.join(args.work_dir, "train"), split="train")
    test_man = generate_synthetic_corpus(
        test_spec, os.path.join(args.work_dir, "test"), split="test")
    write_manifest(train_man, os.path.join(args.work_dir, "train_manifest.csv"))
    write_manifest(test_man, os.path.join(args.work_dir, "test_manifest.csv"))
    print(f"corpora ready ({len(train_man)} train / {len(test_man)} test "
          f"clips), {time.time() - t0:.0f} s", flush=True)

    hyper = TrainConfig(seed=args.seed, lr=args.lr, batch_size=32,
                        epochs=args.epochs, patience=args.epochs,
                        channel_scale=args.channel_scale, dropout_rate=0.0,
                        input_frames=100, input_bins=161)
    model = build_model(hyper.model_config(), seed=hyper.seed)

    def progress(epoch, train_mse, val_mse):
        print(f"epoch {epoch:2d}  train_mse={train_mse:.4f}  "
              f"val_mse={val_mse:.4f}  t={time.time() - t0:.0f}s", flush=True)

    bundle, curve = train(model, train_man, hyper, progress=progress)
    weights_path = os.path.join(args.work_dir, "model.sqaw")
    save_weights(bundle, weights_path)
    with open(os.path.join(args.work_dir, "loss_curve.csv"), "w") as f:
        f.write("epoch,train_mse,val_mse\n")
        for epoch, tr, va in curve:
            f.write(f"{epoch},{tr:.6f},{va:.6f}\n")
    print(f"weights -> {weights_path} (checksum {bundle.checksum()[:16]})")

    pairs = []
    for c in test_man.clips:
        s = score_clip(model, load_wav(c.clip_path))
        pairs.append(ScorePair(c.clip_id, c.model_id,
                               (c.mos_sig, c.mos_bak, c.mos_ovrl),
                               (s.sig, s.bak, s.ovrl)))
    print()
    print(correlation_report(pairs).to_table())
    print(f"total {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
