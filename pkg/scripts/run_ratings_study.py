#!/usr/bin/env python3
"""Simulated-rater reproducibility study on synthetic corpus labels.

For each rating-count N, draws N discrete 1-5 ballots per clip (Gaussian
rater noise, rounded and clamped), averages them, and reports (a) how well
the averaged ratings correlate with the true MOS and (b) how well two
independent rating runs correlate with each other — the run-to-run
repeatability a crowdsourced study would see at that N.

Example:
    python3 scripts/run_ratings_study.py --n 5 15 30 --noise-sd 1.0
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from sqa.dataset import SynthSpec, generate_synthetic_corpus
from sqa.evaluate import ratings_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus-dir", default="/tmp/sqa_ratings_corpus",
                    help="where the (tiny) label corpus is generated")
    ap.add_argument("--models", type=int, default=10)
    ap.add_argument("--clips-per-model", type=int, default=50)
    ap.add_argument("--n", type=int, nargs="+", default=[5, 15, 30],
                    help="rating counts to study")
    ap.add_argument("--noise-sd", type=float, default=1.0)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    # only labels matter here, so keep clips minimal
    spec = SynthSpec(num_models=args.models,
                     clips_per_model=args.clips_per_model,
                     duration_s=0.05, seed=args.seed + 1000)
    manifest = generate_synthetic_corpus(spec, args.corpus_dir, split="study")
    print(f"{len(manifest)} clips, noise_sd={args.noise_sd}, "
          f"{args.trials} trials\n")

    res = ratings_study(manifest, args.n, noise_sd=args.noise_sd,
                        trials=args.trials, seed=args.seed)
    header = f"{'N':>4}  {'stat':<16}" + "".join(f"{h.upper():>14}" for h in ("sig", "bak", "ovrl"))
    print(header)
    print("-" * len(header))
    for n in args.n:
        for key in ("pcc_vs_truth", "run_to_run_pcc"):
            cells = "".join(
                f"{m:>8.3f}±{sd:<5.3f}"
                for m, sd in (res.per_n[n][key][h] for h in ("sig", "bak", "ovrl")))
            print(f"{n:>4}  {key:<16}{cells}")


if __name__ == "__main__":
    main()
